"""Trace-level QoS metrics: round trip delay, segment size, throughput, retransmissions.

Sequence arithmetic is modulo 2**32; two sequence numbers are compared inside a
2**31 window, so flows longer than 2 GiB per direction are handled as long as
the capture has no gaps of that size.
"""

from __future__ import annotations

import heapq
import math
from bisect import bisect_right
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import SEQ_MOD, Direction, PacketRecord, PacketTrace, TcpFlag
from .errors import EmptyTrace, ZeroDuration
from .regression import t_quantile

HALF_SEQ = SEQ_MOD >> 1
COUNTED_DIRECTIONS = "both"

# Regressor candidates exposed to model selection, in table order.
METRICS = (
    "handshake_rtt_ms",
    "allseg_rtt_ms",
    "mean_segment_len_bytes",
    "pkts_per_s",
    "bytes_per_s",
    "retrans_pkts_per_s",
    "retrans_bytes_per_s",
    "measured_loss_rate",
)


@dataclass(frozen=True)
class MeanCI:
    mean: float
    ci_low: float
    ci_high: float
    n: int


def mean_ci(samples: Sequence[float], level: float = 0.95) -> MeanCI:
    """Student-t confidence interval for the mean; collapses to the mean when n < 2."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n == 0:
        return MeanCI(math.nan, math.nan, math.nan, 0)
    mean = float(x.mean())
    if n < 2:
        return MeanCI(mean, mean, mean, n)
    half = t_quantile(1.0 - (1.0 - level) / 2.0, n - 1) * float(x.std(ddof=1)) / math.sqrt(n)
    return MeanCI(mean, min(mean - half, mean), max(mean + half, mean), n)


def seq_diff(a: int, b: int) -> int:
    """Signed distance a - b in modular sequence space, in [-2**31, 2**31)."""
    return ((a - b + HALF_SEQ) % SEQ_MOD) - HALF_SEQ


class _Unwrapper:
    """Maps 32-bit sequence numbers onto a monotone-ish integer axis."""

    def __init__(self, start: int):
        self.last = start

    def __call__(self, value: int) -> int:
        self.last = self.last + seq_diff(value, self.last % SEQ_MOD)
        return self.last


class _ByteRanges:
    """Sorted, merged half-open intervals of observed bytes."""

    def __init__(self):
        self.starts: list[int] = []
        self.ends: list[int] = []

    def overlaps(self, lo: int, hi: int) -> bool:
        i = bisect_right(self.starts, lo) - 1
        if i >= 0 and self.ends[i] > lo:
            return True
        return i + 1 < len(self.starts) and self.starts[i + 1] < hi

    def add(self, lo: int, hi: int) -> None:
        i = bisect_right(self.starts, lo) - 1
        if i >= 0 and self.ends[i] >= lo:
            lo = self.starts[i]
        else:
            i += 1
        j = i
        while j < len(self.starts) and self.starts[j] <= hi:
            hi = max(hi, self.ends[j])
            j += 1
        self.starts[i:j] = [lo]
        self.ends[i:j] = [hi]


@dataclass(frozen=True)
class FlowView:
    conn_id: int
    records: tuple[tuple[int, PacketRecord], ...]  # (index in parent trace, record)

    def direction(self, d: Direction) -> list[tuple[int, PacketRecord]]:
        return [(i, r) for i, r in self.records if r.dir is d]

    def first_seq(self, d: Direction) -> int | None:
        for _, r in self.records:
            if r.dir is d:
                return r.seq
        return None


def split_flows(trace: PacketTrace) -> list[FlowView]:
    groups: dict[int, list[tuple[int, PacketRecord]]] = {}
    for i, rec in enumerate(trace.records):
        groups.setdefault(rec.conn_id, []).append((i, rec))
    return [FlowView(cid, tuple(groups[cid])) for cid in sorted(groups)]


def handshake_rtt(flow: FlowView) -> float | None:
    syn = next((r for _, r in flow.records if r.dir is Direction.UP and r.is_syn and not r.flags & TcpFlag.ACK),
               None)
    synack = next((r for _, r in flow.records if r.dir is Direction.DOWN and r.is_synack), None)
    if syn is None or synack is None or synack.ts_us < syn.ts_us:
        return None
    return (synack.ts_us - syn.ts_us) / 1000.0


def _unwrappers(flow: FlowView) -> dict[Direction, _Unwrapper]:
    out = {}
    for d in Direction:
        first = flow.first_seq(d)
        if first is not None:
            out[d] = _Unwrapper(first)
    return out


def detect_retransmissions(flow: FlowView) -> set[int]:
    """Indices (into the parent trace) of payload segments that resend observed bytes."""
    flagged: set[int] = set()
    seqs = _unwrappers(flow)
    seen = {d: _ByteRanges() for d in Direction}
    for idx, rec in flow.records:
        if rec.payload_len == 0:
            continue
        lo = seqs[rec.dir](rec.seq)
        hi = lo + rec.payload_len
        if seen[rec.dir].overlaps(lo, hi):
            flagged.add(idx)
        seen[rec.dir].add(lo, hi)
    return flagged


def allseg_rtt_samples(flow: FlowView, retransmitted: set[int] | None = None) -> list[float]:
    """Delay (ms) from each payload segment to the first opposite-direction ACK covering it.

    Segments that are themselves retransmissions, or whose bytes are resent
    before the covering ACK shows up, yield no sample.
    """
    if retransmitted is None:
        retransmitted = detect_retransmissions(flow)
    seqs = _unwrappers(flow)
    acks = {d: _Unwrapper(u.last) for d, u in seqs.items()}
    # pending[d]: heap of (end, start, ts_us, key) for unacknowledged segments sent in direction d
    pending: dict[Direction, list] = {d: [] for d in Direction}
    tainted: set[int] = set()
    samples: list[float] = []
    for idx, rec in flow.records:
        if rec.payload_len:
            lo = seqs[rec.dir](rec.seq)
            hi = lo + rec.payload_len
            if idx in retransmitted:
                for end, start, _, key in pending[rec.dir]:
                    if start < hi and lo < end:
                        tainted.add(key)
            else:
                heapq.heappush(pending[rec.dir], (hi, lo, rec.ts_us, idx))
        if rec.flags & TcpFlag.ACK:
            acked_dir = Direction.DOWN if rec.dir is Direction.UP else Direction.UP
            if acked_dir not in acks:
                continue
            ack = acks[acked_dir](rec.ack)
            heap = pending[acked_dir]
            while heap and heap[0][0] <= ack:
                _, _, ts, key = heapq.heappop(heap)
                if key not in tainted:
                    samples.append((rec.ts_us - ts) / 1000.0)
    return samples


@dataclass(frozen=True)
class QosSummary:
    service_id: str
    environment_id: str
    handshake_rtt_ms: MeanCI
    allseg_rtt_ms: MeanCI
    mean_segment_len_bytes: float
    pkts_per_s: float
    bytes_per_s: float
    retrans_pkts_per_s: float
    retrans_bytes_per_s: float
    measured_loss_rate: float

    def metric(self, name: str) -> float:
        value = getattr(self, name)
        return value.mean if isinstance(value, MeanCI) else float(value)

    def row(self) -> dict:
        """Flat CSV row: one column per metric, plus CI columns for the two RTTs."""
        out: dict = {"service": self.service_id, "environment": self.environment_id}
        for name in METRICS:
            value = getattr(self, name)
            out[name] = value.mean if isinstance(value, MeanCI) else value
            if isinstance(value, MeanCI):
                out[f"{name}_ci_low"] = value.ci_low
                out[f"{name}_ci_high"] = value.ci_high
                out[f"{name}_n"] = value.n
        return out

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["directions"] = COUNTED_DIRECTIONS
        return doc


def summarize(trace: PacketTrace, level: float = 0.95) -> QosSummary:
    if not trace.records:
        raise EmptyTrace(f"trace {trace.label} has no records")
    duration_s = (trace.records[-1].ts_us - trace.records[0].ts_us) / 1e6
    if duration_s <= 0:
        raise ZeroDuration(f"trace {trace.label} spans zero time")

    handshakes: list[float] = []
    rtts: list[float] = []
    flagged: set[int] = set()
    for flow in split_flows(trace):
        hs = handshake_rtt(flow)
        if hs is not None:
            handshakes.append(hs)
        retrans = detect_retransmissions(flow)
        flagged |= retrans
        rtts.extend(allseg_rtt_samples(flow, retrans))

    payload = [r.payload_len for r in trace.records if r.payload_len > 0]
    total_bytes = sum(payload)
    retrans_bytes = sum(trace.records[i].payload_len for i in flagged)
    return QosSummary(
        service_id=trace.service_id,
        environment_id=trace.environment_id,
        handshake_rtt_ms=mean_ci(handshakes, level),
        allseg_rtt_ms=mean_ci(rtts, level),
        mean_segment_len_bytes=total_bytes / len(payload) if payload else 0.0,
        pkts_per_s=len(trace.records) / duration_s,
        bytes_per_s=total_bytes / duration_s,
        retrans_pkts_per_s=len(flagged) / duration_s,
        retrans_bytes_per_s=retrans_bytes / duration_s,
        measured_loss_rate=len(flagged) / len(payload) if payload else 0.0,
    )


def summaries_by_label(traces: Iterable[PacketTrace]) -> list[QosSummary]:
    return sorted((summarize(t) for t in traces), key=lambda s: (s.service_id, s.environment_id))
