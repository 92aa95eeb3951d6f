"""Synthetic study: packet traces and subject sessions under impaired networks.

Each (service, environment) cell gets one packet trace, a series of page
loads over separate TCP connections, and a cohort of synthetic subjects whose
task success, interaction effort and ratings follow planted linear models of
the cell's measured retransmission rate and the service dummy.

Trace timing puts every response exactly one round trip after its trigger:
SYN+ACK one RTT after SYN, the first response segment one RTT after the
request, and the client's ACK one RTT after a data segment's delivering
transmission. Only server data segments are subject to loss; handshake,
request, ACK and FIN segments always get through. There is no congestion
control: segments leave at a fixed spacing and a lost one is resent after a
timeout of one RTT plus ``rto_ms``, again exposed to loss.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .core import (PRIORITIES, ConditionOutcome, Direction, Environment, PacketRecord, PacketTrace,
                   SessionLog, StudyConfig, TcpFlag, dump_ratings, dump_sessions, dump_trace,
                   ratings_from_sessions, trace_filename)
from .qos import summarize
from .rng import SplitMix64, derive_seed

SEQ_MASK = (1 << 32) - 1
REQUEST_LEN = 400
RATING_BOUNDARIES = (-2.5, -1.5, -0.5, 0.5, 1.5, 2.5)


class Mode(enum.Enum):
    DETERMINISTIC = "deterministic"  # no loss whatever the environment says
    STOCHASTIC = "stochastic"


@dataclass(frozen=True)
class ServiceProfile:
    service_id: str
    base_rtt_ms: float = 20.0
    mean_segment_len: int = 1400
    segments_per_page: int = 50
    pages_per_session: int = 40
    rto_ms: float = 200.0  # added to the path RTT to give the resend timeout
    segment_gap_ms: float = 1.0
    think_ms: float = 100.0

    def __post_init__(self):
        for name in ("base_rtt_ms", "mean_segment_len", "segments_per_page", "pages_per_session",
                     "rto_ms", "segment_gap_ms"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.think_ms < 0:
            raise ValueError("think_ms must be non-negative")

    @property
    def data_segments(self) -> int:
        return self.segments_per_page * self.pages_per_session


# The two default services differ in segment length by 200 bytes.
DEFAULT_PROFILES = (
    ServiceProfile("A", mean_segment_len=1400),
    ServiceProfile("B", mean_segment_len=1200),
)


def default_profiles(services: Sequence[str]) -> dict[str, ServiceProfile]:
    out = {}
    for i, sid in enumerate(services):
        template = DEFAULT_PROFILES[i % len(DEFAULT_PROFILES)]
        out[sid] = ServiceProfile(sid, **{k: v for k, v in vars(template).items() if k != "service_id"})
    return out


@dataclass(frozen=True)
class BehaviorModel:
    """Planted ground truth for synthetic subjects.

    Achievement probability and latent satisfaction are linear in the
    retransmission rate T (packets/s) and the service dummy X; interaction
    counts scale by ``1 + workload_per_T*T + workload_per_X*X``.
    """

    achieve_intercept: float = 0.985
    achieve_per_T: float = -0.00658
    achieve_per_X: float = -0.0196
    sat_intercept: float = 0.693
    sat_per_T: float = -0.00673
    sat_per_X: float = -0.124
    rating_dispersion: float = 1.0
    condition_layout: tuple[int, int, int] = (10, 10, 10)  # conditions per priority H, M, L
    wheel_spins: float = 60.0
    mouse_distance: float = 2.0
    clicks: float = 40.0
    keystrokes: float = 60.0
    count_cv: float = 0.2
    workload_per_T: float = 0.01
    workload_per_X: float = 0.1
    reference_service: str = "A"

    def achievement_probability(self, T: float, X: int) -> float:
        p = self.achieve_intercept + self.achieve_per_T * T + self.achieve_per_X * X
        return min(max(p, 0.0), 1.0)

    def latent_satisfaction(self, T: float, X: int) -> float:
        return self.sat_intercept + self.sat_per_T * T + self.sat_per_X * X

    def workload_factor(self, T: float, X: int) -> float:
        return max(1.0 + self.workload_per_T * T + self.workload_per_X * X, 0.0)


def rating_category(latent: float) -> int:
    return 1 + sum(latent > b for b in RATING_BOUNDARIES)


# -- traces ------------------------------------------------------------------

def synth_trace(env: Environment, profile: ServiceProfile, seed: int,
                mode: Mode = Mode.STOCHASTIC) -> PacketTrace:
    rng = SplitMix64(seed)
    loss = env.added_loss_rate if mode is Mode.STOCHASTIC else 0.0
    if loss >= 1.0:
        raise ValueError(f"environment {env.id}: total loss never delivers a segment")
    rtt = round((profile.base_rtt_ms + env.added_rtt_ms) * 1000)
    gap = round(profile.segment_gap_ms * 1000)
    rto = round(profile.rto_ms * 1000) + rtt
    think = round(profile.think_ms * 1000)
    seg_len = int(profile.mean_segment_len)
    records: list[PacketRecord] = []

    def emit(ts, conn, d, seq, ack, flags, plen=0):
        records.append(PacketRecord(ts, conn, d, seq & SEQ_MASK, ack & SEQ_MASK, flags, plen))

    up, down = Direction.UP, Direction.DOWN
    A, S, F, P = TcpFlag.ACK, TcpFlag.SYN, TcpFlag.FIN, TcpFlag.PSH
    t0 = 0
    for conn in range(profile.pages_per_session):
        isn_c, isn_s = rng.next_u32(), rng.next_u32()
        emit(t0, conn, up, isn_c, 0, S)
        emit(t0 + rtt, conn, down, isn_s, isn_c + 1, S | A)
        req_ts = t0 + rtt
        emit(req_ts, conn, up, isn_c + 1, isn_s + 1, A | P, REQUEST_LEN)
        req_end = isn_c + 1 + REQUEST_LEN

        deliveries = []  # (delivery ts, segment index)
        n = profile.segments_per_page
        for i in range(n):
            first = req_ts + rtt + i * gap
            seq = isn_s + 1 + i * seg_len
            flags = A | P if i == n - 1 else A
            attempt = first
            while True:
                emit(attempt, conn, down, seq, req_end, flags, seg_len)
                if not (loss and rng.bernoulli(loss)):
                    break
                attempt += rto
            deliveries.append((attempt, i))

        received = [False] * n
        next_needed = 0
        for ts, i in sorted(deliveries):
            received[i] = True
            while next_needed < n and received[next_needed]:
                next_needed += 1
            emit(ts + rtt, conn, up, req_end, isn_s + 1 + next_needed * seg_len, A)

        done = max(ts for ts, _ in deliveries) + rtt
        fin_seq = isn_s + 1 + n * seg_len
        emit(done, conn, down, fin_seq, req_end, F | A)
        emit(done + rtt, conn, up, req_end, fin_seq + 1, F | A)
        t0 = done + rtt + think
    return PacketTrace(tuple(records), (profile.service_id, env.id))


# -- subjects ----------------------------------------------------------------

def expected_retrans_rate(env: Environment, profile: ServiceProfile) -> float:
    """Rough retransmissions/s for a cell: geometric resend count over the loss-free duration."""
    p = env.added_loss_rate
    if p <= 0:
        return 0.0
    if p >= 1:
        return math.inf
    duration = _duration_s(synth_trace(env, profile, 0, Mode.DETERMINISTIC))
    return profile.data_segments * p / (1 - p) / duration


def _duration_s(trace: PacketTrace) -> float:
    return (trace.records[-1].ts_us - trace.records[0].ts_us) / 1e6


def synth_sessions(env: Environment, profile: ServiceProfile, behavior: BehaviorModel, n_subjects: int,
                   seed: int, retrans_rate: float | None = None, dummy: int | None = None) -> list[SessionLog]:
    """Synthetic subjects for one cell.

    ``retrans_rate`` is the cell's T; when omitted it is estimated from the
    environment and profile. ``dummy`` defaults to 0 for the behavior
    model's reference service and 1 otherwise.
    """
    if n_subjects < 1:
        raise ValueError("n_subjects must be >= 1")
    T = expected_retrans_rate(env, profile) if retrans_rate is None else retrans_rate
    X = (0 if profile.service_id == behavior.reference_service else 1) if dummy is None else dummy
    rng = SplitMix64(seed)
    p_achieve = behavior.achievement_probability(T, X)
    mean_sat = behavior.latent_satisfaction(T, X)
    factor = behavior.workload_factor(T, X)

    def draw_count(mean):
        return max(rng.normal(mean * factor, mean * factor * behavior.count_cv), 0.0)

    sessions = []
    for i in range(n_subjects):
        conditions = []
        for priority, count in zip(PRIORITIES, behavior.condition_layout):
            for _ in range(count):
                conditions.append(ConditionOutcome(priority, rng.uniform() < p_achieve))
        wheel = round(draw_count(behavior.wheel_spins), 3)
        mouse = round(draw_count(behavior.mouse_distance), 6)
        clicks = round(draw_count(behavior.clicks))
        keys = round(draw_count(behavior.keystrokes))
        latent = mean_sat + behavior.rating_dispersion * rng.normal()
        sessions.append(SessionLog(
            subject_id=f"s{i + 1:02d}",
            service_id=profile.service_id,
            environment_id=env.id,
            wheel_spins=wheel,
            mouse_distance=mouse,
            clicks=clicks,
            keystrokes=keys,
            conditions=tuple(conditions),
            rating=rating_category(latent),
        ))
    return sessions


# -- whole study -------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    service_id: str
    environment_id: str
    trace: PacketTrace
    sessions: tuple[SessionLog, ...]


@dataclass(frozen=True)
class StudyBundle:
    config: StudyConfig
    seed: int
    mode: Mode
    cells: tuple[Cell, ...]
    profiles: Mapping[str, ServiceProfile] = field(default_factory=dict)

    @property
    def sessions(self) -> list[SessionLog]:
        return [s for c in self.cells for s in c.sessions]

    @property
    def traces(self) -> list[PacketTrace]:
        return [c.trace for c in self.cells]


def run_study(config: StudyConfig, profiles: Mapping[str, ServiceProfile] | None = None,
              behavior: BehaviorModel | None = None, seed: int = 0,
              mode: Mode = Mode.STOCHASTIC) -> StudyBundle:
    profiles = dict(profiles) if profiles else default_profiles(config.services)
    behavior = behavior or BehaviorModel(reference_service=config.reference_service)
    cells = []
    for index, (service, env_id) in enumerate(sorted(config.cells())):
        env = config.environment(env_id)
        profile = profiles[service]
        trace = synth_trace(env, profile, derive_seed(seed, index, 0), mode)
        T = summarize(trace).retrans_pkts_per_s
        sessions = synth_sessions(env, profile, behavior, config.n_subjects, derive_seed(seed, index, 1),
                                  retrans_rate=T, dummy=config.dummy(service))
        cells.append(Cell(service, env_id, trace, tuple(sessions)))
    return StudyBundle(config, seed, mode, tuple(cells), profiles)


def bundle_files(bundle: StudyBundle) -> dict[str, str]:
    """Relative path -> file content for every artifact of a bundle, manifest last."""
    files = {}
    for cell in bundle.cells:
        files[f"traces/{trace_filename(cell.service_id, cell.environment_id)}"] = dump_trace(cell.trace)
    files["sessions.jsonl"] = dump_sessions(bundle.sessions)
    files["ratings.csv"] = dump_ratings(ratings_from_sessions(bundle.sessions))
    files["config.json"] = json.dumps(bundle.config.to_dict(), indent=2) + "\n"
    manifest = {
        "tool": "qoeweb",
        "version": __version__,
        "seed": bundle.seed,
        "mode": bundle.mode.value,
        "config_sha256": bundle.config.digest(),
        "files": {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(files.items())},
    }
    files["manifest.json"] = json.dumps(manifest, indent=2) + "\n"
    return files


def write_files(files: Mapping[str, str], out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    for name, text in files.items():
        path = out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text)
        tmp.replace(path)
