"""Shared data types, file formats and study validation."""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ParseError, ValidationError

SEQ_MOD = 1 << 32
MAX_PAYLOAD = 65535
TRACE_HEADER = ("ts_us", "conn_id", "dir", "seq", "ack", "flags", "payload_len")
RATINGS_HEADER = ("subject_id", "service_id", "environment_id", "rating")
LABEL_SEP = "__"


class Direction(enum.Enum):
    UP = "U"  # client -> server
    DOWN = "D"


class TcpFlag(enum.IntFlag):
    NONE = 0
    SYN = 1
    ACK = 2
    FIN = 4
    RST = 8
    PSH = 16


_FLAG_LETTERS = (("S", TcpFlag.SYN), ("A", TcpFlag.ACK), ("F", TcpFlag.FIN),
                 ("R", TcpFlag.RST), ("P", TcpFlag.PSH))


def parse_flags(text: str) -> TcpFlag:
    flags = TcpFlag.NONE
    lookup = dict(_FLAG_LETTERS)
    for ch in text.strip():
        if ch not in lookup:
            raise ValueError(f"unknown flag letter {ch!r}")
        flags |= lookup[ch]
    return flags


def format_flags(flags: TcpFlag) -> str:
    return "".join(letter for letter, bit in _FLAG_LETTERS if flags & bit)


@dataclass(frozen=True, slots=True)
class PacketRecord:
    ts_us: int
    conn_id: int
    dir: Direction
    seq: int
    ack: int
    flags: TcpFlag
    payload_len: int

    def __post_init__(self):
        if self.ts_us < 0:
            raise ValidationError(f"negative timestamp {self.ts_us}")
        if not 0 <= self.payload_len <= MAX_PAYLOAD:
            raise ValidationError(f"payload_len {self.payload_len} outside [0, {MAX_PAYLOAD}]")
        if not (0 <= self.seq < SEQ_MOD and 0 <= self.ack < SEQ_MOD):
            raise ValidationError("seq/ack must be 32-bit unsigned")
        if not self.flags and self.payload_len == 0:
            raise ValidationError("record has neither flags nor payload")

    @property
    def is_syn(self) -> bool:
        return bool(self.flags & TcpFlag.SYN)

    @property
    def is_synack(self) -> bool:
        return bool(self.flags & TcpFlag.SYN) and bool(self.flags & TcpFlag.ACK)


@dataclass(frozen=True)
class PacketTrace:
    """Time-ordered TCP segment observations for one (service, environment) cell.

    Records are sorted by ``ts_us`` on construction; equal timestamps keep
    their input order.
    """

    records: tuple[PacketRecord, ...]
    label: tuple[str, str] = ("", "")

    def __post_init__(self):
        ordered = tuple(sorted(self.records, key=lambda r: r.ts_us))
        object.__setattr__(self, "records", ordered)
        seen_up: set[int] = set()
        for rec in ordered:
            if rec.dir is Direction.UP and rec.conn_id not in seen_up:
                seen_up.add(rec.conn_id)
                if not rec.is_syn:
                    raise ValidationError(
                        f"connection {rec.conn_id}: first client record lacks SYN")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def service_id(self) -> str:
        return self.label[0]

    @property
    def environment_id(self) -> str:
        return self.label[1]


class Priority(enum.Enum):
    HIGH = "H"
    MID = "M"
    LOW = "L"


PRIORITIES = (Priority.HIGH, Priority.MID, Priority.LOW)


@dataclass(frozen=True, slots=True)
class ConditionOutcome:
    priority: Priority
    achieved: bool


@dataclass(frozen=True)
class SessionLog:
    subject_id: str
    service_id: str
    environment_id: str
    wheel_spins: float
    mouse_distance: float
    clicks: int
    keystrokes: int
    conditions: tuple[ConditionOutcome, ...]
    rating: int

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(self.conditions))
        if isinstance(self.rating, bool) or self.rating not in range(1, 8):
            raise ValidationError(f"rating {self.rating!r} not in 1..7")
        for name in ("wheel_spins", "mouse_distance", "clicks", "keystrokes"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if not self.conditions:
            raise ValidationError(f"session {self.subject_id}: no conditions")

    @property
    def cell(self) -> tuple[str, str]:
        return (self.service_id, self.environment_id)

    def condition_counts(self) -> dict[Priority, tuple[int, int]]:
        """(achieved, total) per priority."""
        out = {p: (0, 0) for p in PRIORITIES}
        for c in self.conditions:
            got, tot = out[c.priority]
            out[c.priority] = (got + int(c.achieved), tot + 1)
        return out


@dataclass(frozen=True)
class Environment:
    id: str
    added_rtt_ms: float
    added_loss_rate: float

    def __post_init__(self):
        if self.added_rtt_ms < 0:
            raise ValidationError(f"environment {self.id}: negative added delay")
        if not 0.0 <= self.added_loss_rate <= 1.0:
            raise ValidationError(f"environment {self.id}: loss rate outside [0, 1]")


class WorkloadMode(enum.Enum):
    PRODUCT_AS_PRINTED = "ProductAsPrinted"
    RATE_NORMALIZED = "RateNormalized"


# Five experimental environments: (added round trip delay ms, added loss rate).
DEFAULT_ENVIRONMENTS = (
    Environment("1", 0.0, 0.0),
    Environment("2", 150.0, 0.0),
    Environment("3", 0.0, 0.05),
    Environment("4", 150.0, 0.05),
    Environment("5", 200.0, 0.10),
)
DEFAULT_WEIGHTS = (0.6, 0.3, 0.1)
DEFAULT_WORKLOAD_COEFFICIENTS = (100.0, 10000.0, 20.0, 20.0)


@dataclass(frozen=True)
class StudyConfig:
    environments: tuple[Environment, ...] = DEFAULT_ENVIRONMENTS
    services: tuple[str, ...] = ("A", "B")
    reference_service: str = "A"
    priority_weights: tuple[float, float, float] = DEFAULT_WEIGHTS
    workload_coefficients: tuple[float, float, float, float] = DEFAULT_WORKLOAD_COEFFICIENTS
    workload_mode: WorkloadMode = WorkloadMode.PRODUCT_AS_PRINTED
    n_subjects: int = 35  # simulator only

    def __post_init__(self):
        for name in ("environments", "services", "priority_weights", "workload_coefficients"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def weight_of(self, priority: Priority) -> float:
        return self.priority_weights[PRIORITIES.index(priority)]

    def dummy(self, service_id: str) -> int:
        return 0 if service_id == self.reference_service else 1

    def environment(self, env_id: str) -> Environment:
        for env in self.environments:
            if env.id == env_id:
                return env
        raise KeyError(env_id)

    def cells(self) -> list[tuple[str, str]]:
        return [(s, e.id) for s in self.services for e in self.environments]

    def to_dict(self) -> dict:
        return {
            "environments": [
                {"id": e.id, "added_rtt_ms": e.added_rtt_ms, "added_loss_rate": e.added_loss_rate}
                for e in self.environments
            ],
            "services": list(self.services),
            "reference_service": self.reference_service,
            "priority_weights": list(self.priority_weights),
            "workload_coefficients": list(self.workload_coefficients),
            "workload_mode": self.workload_mode.value,
            "n_subjects": self.n_subjects,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "StudyConfig":
        defaults = cls()
        try:
            envs = doc.get("environments")
            environments = (
                tuple(Environment(str(e["id"]), float(e["added_rtt_ms"]), float(e["added_loss_rate"]))
                      for e in envs)
                if envs is not None else defaults.environments
            )
            return cls(
                environments=environments,
                services=tuple(str(s) for s in doc.get("services", defaults.services)),
                reference_service=str(doc.get("reference_service", defaults.reference_service)),
                priority_weights=tuple(float(w) for w in doc.get("priority_weights", defaults.priority_weights)),
                workload_coefficients=tuple(
                    float(c) for c in doc.get("workload_coefficients", defaults.workload_coefficients)),
                workload_mode=WorkloadMode(doc.get("workload_mode", defaults.workload_mode.value)),
                n_subjects=int(doc.get("n_subjects", defaults.n_subjects)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad study config: {exc}") from exc

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def load_config(path: str | Path | None) -> StudyConfig:
    if path is None:
        return StudyConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.lineno, exc.msg, str(path)) from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return StudyConfig.from_dict(doc)


def save_config(config: StudyConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


# -- traces ------------------------------------------------------------------

def label_from_path(path: str | Path) -> tuple[str, str]:
    """``<service>__<environment>.csv`` -> (service, environment)."""
    stem = Path(path).stem
    if LABEL_SEP in stem:
        service, env = stem.split(LABEL_SEP, 1)
        return (service, env)
    return (stem, "")


def trace_filename(service_id: str, environment_id: str) -> str:
    return f"{service_id}{LABEL_SEP}{environment_id}.csv"


def _parse_uint(text: str, name: str) -> int:
    text = text.strip()
    if not text.isdigit():
        raise ValueError(f"{name} is not an unsigned integer: {text!r}")
    return int(text)


def parse_trace(text: str, label: tuple[str, str] = ("", ""), source: str = "") -> PacketTrace:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(1, "missing header", source) from None
    if tuple(h.strip() for h in header) != TRACE_HEADER:
        raise ParseError(1, f"expected header {','.join(TRACE_HEADER)}", source)
    records = []
    # row numbers count the header as row 1
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(TRACE_HEADER):
            raise ParseError(row_no, f"expected {len(TRACE_HEADER)} fields, got {len(row)}", source)
        try:
            ts, conn, d, seq, ack, flags, plen = row
            if d.strip() not in ("U", "D"):
                raise ValueError(f"dir must be U or D, got {d!r}")
            direction = Direction(d.strip())
            values = [_parse_uint(v, n) for v, n in
                      ((ts, "ts_us"), (conn, "conn_id"), (seq, "seq"), (ack, "ack"), (plen, "payload_len"))]
            rec = PacketRecord(values[0], values[1], direction, values[2], values[3],
                               parse_flags(flags), values[4])
        except ValidationError as exc:
            raise ParseError(row_no, str(exc), source) from exc
        except ValueError as exc:
            raise ParseError(row_no, str(exc), source) from exc
        records.append(rec)
    return PacketTrace(tuple(records), label)


def load_trace(path: str | Path, label: tuple[str, str] | None = None) -> PacketTrace:
    path = Path(path)
    return parse_trace(path.read_text(), label or label_from_path(path), str(path))


def dump_trace(trace: PacketTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for r in trace.records:
        writer.writerow((r.ts_us, r.conn_id, r.dir.value, r.seq, r.ack, format_flags(r.flags), r.payload_len))
    return buf.getvalue()


def save_trace(trace: PacketTrace, path: str | Path) -> None:
    Path(path).write_text(dump_trace(trace))


# -- sessions ----------------------------------------------------------------

def session_to_dict(s: SessionLog) -> dict:
    return {
        "subject_id": s.subject_id,
        "service_id": s.service_id,
        "environment_id": s.environment_id,
        "wheel_spins": s.wheel_spins,
        "mouse_distance": s.mouse_distance,
        "clicks": s.clicks,
        "keystrokes": s.keystrokes,
        "conditions": [{"priority": c.priority.value, "achieved": c.achieved} for c in s.conditions],
        "rating": s.rating,
    }


def session_from_dict(doc: dict) -> SessionLog:
    conditions = []
    for c in doc["conditions"]:
        if not isinstance(c["achieved"], bool):
            raise ValueError("condition 'achieved' must be a boolean")
        conditions.append(ConditionOutcome(Priority(c["priority"]), c["achieved"]))
    for key in ("clicks", "keystrokes", "rating"):
        if isinstance(doc[key], bool) or not isinstance(doc[key], int):
            raise ValueError(f"{key} must be an integer")
    for key in ("wheel_spins", "mouse_distance"):
        if isinstance(doc[key], bool) or not isinstance(doc[key], (int, float)):
            raise ValueError(f"{key} must be a number")
    return SessionLog(
        subject_id=str(doc["subject_id"]),
        service_id=str(doc["service_id"]),
        environment_id=str(doc["environment_id"]),
        wheel_spins=doc["wheel_spins"],
        mouse_distance=doc["mouse_distance"],
        clicks=doc["clicks"],
        keystrokes=doc["keystrokes"],
        conditions=tuple(conditions),
        rating=doc["rating"],
    )


def parse_sessions(text: str, source: str = "") -> list[SessionLog]:
    sessions = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(line_no, f"invalid JSON: {exc.msg}", source) from exc
        if not isinstance(doc, dict):
            raise ParseError(line_no, "expected a JSON object", source)
        try:
            sessions.append(session_from_dict(doc))
        except ValidationError as exc:
            raise ValidationError(f"{source or 'sessions'} line {line_no}: {exc}") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(line_no, f"bad field: {exc}", source) from exc
    return sessions


def load_sessions(path: str | Path) -> list[SessionLog]:
    path = Path(path)
    return parse_sessions(path.read_text(), str(path))


def dump_sessions(sessions: Iterable[SessionLog]) -> str:
    return "".join(json.dumps(session_to_dict(s), separators=(",", ":")) + "\n" for s in sessions)


def save_sessions(sessions: Iterable[SessionLog], path: str | Path) -> None:
    Path(path).write_text(dump_sessions(sessions))


# -- ratings -----------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Rating:
    subject_id: str
    service_id: str
    environment_id: str
    rating: int


def ratings_from_sessions(sessions: Iterable[SessionLog]) -> list[Rating]:
    return [Rating(s.subject_id, s.service_id, s.environment_id, s.rating) for s in sessions]


def dump_ratings(ratings: Iterable[Rating]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RATINGS_HEADER)
    for r in ratings:
        writer.writerow((r.subject_id, r.service_id, r.environment_id, r.rating))
    return buf.getvalue()


def parse_ratings(text: str, source: str = "") -> list[Rating]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != RATINGS_HEADER:
        raise ParseError(1, f"expected header {','.join(RATINGS_HEADER)}", source)
    out = []
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ParseError(row_no, f"expected 4 fields, got {len(row)}", source)
        try:
            value = _parse_uint(row[3], "rating")
        except ValueError as exc:
            raise ParseError(row_no, str(exc), source) from exc
        if not 1 <= value <= 7:
            raise ValidationError(f"{source or 'ratings'} row {row_no}: rating {value} not in 1..7")
        out.append(Rating(row[0], row[1], row[2], value))
    return out


def load_ratings(path: str | Path) -> list[Rating]:
    path = Path(path)
    return parse_ratings(path.read_text(), str(path))


# -- validation --------------------------------------------------------------

def validate_study(config: StudyConfig, sessions: Sequence[SessionLog] = (),
                   check_cells: bool = True) -> list[str]:
    """Return human-readable problems with a config/session pairing; empty when consistent.

    With ``check_cells=False`` only the config itself and the ids used by
    ``sessions`` are checked, not whether every cell has sessions.
    """
    diags: list[str] = []
    wsum = sum(config.priority_weights)
    if len(config.priority_weights) != 3:
        diags.append(f"priority_weights must have 3 entries, got {len(config.priority_weights)}")
    elif abs(wsum - 1.0) > 1e-12:
        diags.append(f"priority weights sum to {wsum!r}, expected 1")
    if len(config.workload_coefficients) != 4 or any(c <= 0 for c in config.workload_coefficients):
        diags.append("workload_coefficients must be four positive reals")
    if not config.services:
        diags.append("no services configured")
    if len(set(config.services)) != len(config.services):
        diags.append("duplicate service ids")
    env_ids = [e.id for e in config.environments]
    if not env_ids:
        diags.append("no environments configured")
    if len(set(env_ids)) != len(env_ids):
        diags.append("duplicate environment ids")
    if config.reference_service not in config.services:
        diags.append(f"reference service {config.reference_service!r} not among services")

    services, envs = set(config.services), set(env_ids)
    counts: dict[tuple[str, str], int] = {}
    for s in sessions:
        if s.service_id not in services:
            diags.append(f"session {s.subject_id}: unknown service id {s.service_id!r}")
        if s.environment_id not in envs:
            diags.append(f"session {s.subject_id}: unknown environment id {s.environment_id!r}")
        counts[s.cell] = counts.get(s.cell, 0) + 1
    for cell in config.cells() if check_cells else ():
        if counts.get(cell, 0) == 0:
            diags.append(f"empty cell: service {cell[0]!r}, environment {cell[1]!r}")
    return diags


def group_by_cell(sessions: Iterable[SessionLog]) -> dict[tuple[str, str], list[SessionLog]]:
    groups: dict[tuple[str, str], list[SessionLog]] = {}
    for s in sessions:
        groups.setdefault(s.cell, []).append(s)
    return groups
