"""Effectiveness, workload and efficiency per (service, environment) cell."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .core import PRIORITIES, Priority, SessionLog, StudyConfig, WorkloadMode, group_by_cell
from .errors import DegenerateTotals, EmptyCell, InconsistentConditions, ZeroWorkload


@dataclass(frozen=True)
class EffectivenessInput:
    achieved: Sequence[Mapping[Priority, int]]  # one mapping per user
    totals: Mapping[Priority, int]
    weights: Mapping[Priority, float]

    def __post_init__(self):
        if not self.achieved:
            raise ValueError("at least one user is required")
        for p in PRIORITIES:
            if self.totals.get(p, 0) < 0:
                raise ValueError(f"negative total for {p.name}")
            for user in self.achieved:
                if not 0 <= user.get(p, 0) <= self.totals.get(p, 0):
                    raise ValueError(f"achieved count for {p.name} outside [0, total]")

    @property
    def n_users(self) -> int:
        return len(self.achieved)


@dataclass(frozen=True)
class UsabilityScores:
    service_id: str
    environment_id: str
    E: float
    W: float
    H: float
    S: float = math.nan

    def row(self) -> dict:
        return {"service": self.service_id, "environment": self.environment_id,
                "E": self.E, "W": self.W, "H": self.H, "S": self.S}


def effectiveness(inp: EffectivenessInput) -> float:
    """Priority-weighted share of achieved conditions, averaged over users."""
    for p in PRIORITIES:
        if inp.weights.get(p, 0.0) != 0.0 and inp.totals.get(p, 0) == 0:
            raise DegenerateTotals(f"no {p.name} priority conditions but weight {inp.weights[p]}")
    # one correctly rounded sum, so full achievement under weights 0.6/0.3/0.1 is exactly 1
    terms = [inp.weights[p] * (user.get(p, 0) / inp.totals[p])
             for user in inp.achieved for p in PRIORITIES if inp.weights.get(p, 0.0)]
    return math.fsum(terms) / inp.n_users


def user_workload(s: SessionLog, coeffs: Sequence[float], mode: WorkloadMode) -> float:
    i_s, i_m, i_b, i_k = coeffs
    counts = (s.wheel_spins, s.mouse_distance, s.clicks, s.keystrokes)
    if mode is WorkloadMode.PRODUCT_AS_PRINTED:
        return math.fsum(c * k for c, k in zip(counts, (i_s, i_m, i_b, i_k)))
    return math.fsum(c / k for c, k in zip(counts, (i_s, i_m, i_b, i_k)))


def workload(sessions: Sequence[SessionLog], coeffs: Sequence[float],
             mode: WorkloadMode = WorkloadMode.PRODUCT_AS_PRINTED) -> float:
    """Mean per-user interaction effort.

    ``ProductAsPrinted`` multiplies each count by its coefficient;
    ``RateNormalized`` divides, turning counts into time at the given rates.
    """
    if not sessions:
        raise EmptyCell("workload of an empty cell")
    if len(coeffs) != 4 or any(c <= 0 for c in coeffs):
        raise ValueError("workload coefficients must be four positive reals")
    return math.fsum(user_workload(s, coeffs, mode) for s in sessions) / len(sessions)


def efficiency(E: float, W: float) -> float:
    if W == 0:
        raise ZeroWorkload("efficiency undefined for zero workload")
    return E / W


def condition_totals(sessions: Sequence[SessionLog]) -> dict[Priority, int]:
    """Per-priority condition count, required to be identical across the cell."""
    totals = None
    for s in sessions:
        these = {p: tot for p, (_, tot) in s.condition_counts().items()}
        if totals is None:
            totals = these
        elif these != totals:
            raise InconsistentConditions(
                f"cell {s.cell}: subject {s.subject_id} has condition layout "
                f"{_layout(these)}, expected {_layout(totals)}")
    if totals is None:
        raise EmptyCell("no sessions")
    return totals


def _layout(totals: Mapping[Priority, int]) -> str:
    return "/".join(f"{p.value}={totals[p]}" for p in PRIORITIES)


def effectiveness_input(sessions: Sequence[SessionLog], config: StudyConfig) -> EffectivenessInput:
    totals = condition_totals(sessions)
    achieved = [{p: got for p, (got, _) in s.condition_counts().items()} for s in sessions]
    weights = {p: config.weight_of(p) for p in PRIORITIES}
    return EffectivenessInput(achieved, totals, weights)


def score_cell(sessions: Sequence[SessionLog], config: StudyConfig) -> UsabilityScores:
    if not sessions:
        raise EmptyCell("no sessions in cell")
    E = effectiveness(effectiveness_input(sessions, config))
    W = workload(sessions, config.workload_coefficients, config.workload_mode)
    service, env = sessions[0].cell
    return UsabilityScores(service, env, E, W, efficiency(E, W))


def cell_scores(sessions: Sequence[SessionLog], config: StudyConfig) -> list[UsabilityScores]:
    """E, W, H for every configured (service, environment) cell; S left unset."""
    groups = group_by_cell(sessions)
    missing = [c for c in config.cells() if c not in groups]
    if missing:
        raise EmptyCell("no sessions for cells " + ", ".join(f"{s}/{e}" for s, e in missing))
    return [score_cell(groups[c], config) for c in sorted(config.cells())]


def per_user_effectiveness(sessions: Sequence[SessionLog], config: StudyConfig) -> list[float]:
    inp = effectiveness_input(sessions, config)
    return [effectiveness(replace(inp, achieved=[u])) for u in inp.achieved]
