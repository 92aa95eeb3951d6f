"""Interval satisfaction scale from 7-level ratings (law of categorical judgment).

Equal-dispersion form: the cumulative proportion of stimulus j rated at or
below category k satisfies probit(P_jk) = t_k - S_j, where t_k are category
boundaries and S_j the stimulus scale values. The origin is placed at the
lowest-scaled stimulus.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .core import Rating
from .errors import DegenerateMatrix, DomainError, LabelMismatch
from .usability import UsabilityScores

N_CATEGORIES = 7
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# Acklam's rational approximation to the normal quantile (relative error ~1e-9),
# polished below with one Halley step against an erfc-based CDF.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    if p > 1.0 - _P_LOW:
        return -_acklam(1.0 - p)
    q = p - 0.5
    r = q * q
    return ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))


def probit(p: float) -> float:
    """Standard normal quantile, |Phi(probit(p)) - p| <= 1e-10 on (0, 1)."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"probit undefined at p={p!r}")
    if p > 0.5:
        return -probit(1.0 - p)
    x = _acklam(p)
    e = normal_cdf(x) - p
    u = e * _SQRT2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


class ClipPolicy(enum.Enum):
    CLIP = "clip"  # move 0/1 proportions to 1/(2n) and 1 - 1/(2n)
    DROP = "drop"  # ignore cells with 0/1 proportions
    NONE = "none"  # refuse 0/1 proportions


@dataclass(frozen=True)
class RatingMatrix:
    stimuli: tuple[tuple[str, str], ...]
    counts: np.ndarray  # (n_stimuli, 7) category frequencies

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "stimuli", tuple(tuple(s) for s in self.stimuli))
        if counts.ndim != 2 or counts.shape[1] != N_CATEGORIES:
            raise ValueError(f"counts must be (n_stimuli, {N_CATEGORIES})")
        if counts.shape[0] != len(self.stimuli):
            raise ValueError("one count row per stimulus required")
        if (counts < 0).any() or (counts.sum(axis=1) <= 0).any():
            raise ValueError("every stimulus needs at least one rating and no negative counts")

    @property
    def raters_per_stimulus(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @classmethod
    def from_ratings(cls, ratings: Iterable[Rating]) -> "RatingMatrix":
        rows: dict[tuple[str, str], np.ndarray] = {}
        for r in ratings:
            if not 1 <= r.rating <= N_CATEGORIES:
                raise ValueError(f"rating {r.rating} outside 1..{N_CATEGORIES}")
            row = rows.setdefault((r.service_id, r.environment_id), np.zeros(N_CATEGORIES, dtype=np.int64))
            row[r.rating - 1] += 1
        stimuli = sorted(rows)
        if not stimuli:
            raise ValueError("no ratings")
        return cls(tuple(stimuli), np.array([rows[s] for s in stimuli]))


@dataclass(frozen=True)
class ScaleResult:
    stimuli: tuple[tuple[str, str], ...]
    scale_values: np.ndarray
    boundaries: np.ndarray
    clipped_cells: int

    def value(self, stimulus: tuple[str, str]) -> float:
        return float(self.scale_values[self.stimuli.index(tuple(stimulus))])

    def to_dict(self) -> dict:
        return {
            "scale_values": [
                {"service": s, "environment": e, "S": float(v)}
                for (s, e), v in zip(self.stimuli, self.scale_values)
            ],
            "boundaries": [None if math.isnan(b) else float(b) for b in self.boundaries],
            "clipped_cells": self.clipped_cells,
        }


def cumulative_proportions(m: RatingMatrix) -> np.ndarray:
    """(n_stimuli, 6) share of ratings at or below each of the first six categories."""
    cum = np.cumsum(m.counts, axis=1)[:, : N_CATEGORIES - 1]
    return cum / m.raters_per_stimulus[:, None]


def fit_scale(m: RatingMatrix, policy: ClipPolicy = ClipPolicy.CLIP, refinements: int = 1) -> ScaleResult:
    if len(m.stimuli) < 2:
        raise DegenerateMatrix("scaling needs at least two stimuli")
    P = cumulative_proportions(m)
    extreme = (P <= 0.0) | (P >= 1.0)
    clipped = 0
    usable = np.ones_like(P, dtype=bool)
    if policy is ClipPolicy.CLIP:
        eps = (1.0 / (2.0 * m.raters_per_stimulus))[:, None]
        P = np.clip(P, eps, 1.0 - eps)
        clipped = int(extreme.sum())
    elif policy is ClipPolicy.DROP:
        usable = ~extreme
        clipped = int(extreme.sum())
    elif extreme.any():
        j = int(np.argwhere(extreme)[0, 0])
        raise DegenerateMatrix(f"stimulus {m.stimuli[j]} has 0/1 cumulative proportions and clipping is off")
    if not usable.any(axis=1).all():
        j = int(np.argwhere(~usable.any(axis=1))[0, 0])
        raise DegenerateMatrix(f"stimulus {m.stimuli[j]} has no usable category boundary")

    z = np.zeros_like(P)
    for j, k in zip(*np.nonzero(usable)):
        z[j, k] = probit(float(P[j, k]))

    col_n = usable.sum(axis=0)
    row_n = usable.sum(axis=1)

    def boundaries_given(S):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(col_n > 0, ((z + S[:, None]) * usable).sum(axis=0) / col_n, np.nan)

    def scale_given(t):
        tt = np.where(np.isnan(t), 0.0, t)
        return ((tt[None, :] - z) * usable).sum(axis=1) / row_n

    S = np.zeros(len(m.stimuli))
    t = boundaries_given(S)
    S = scale_given(t)
    for _ in range(refinements):
        t = boundaries_given(S)
        S = scale_given(t)
    origin = S.min()
    return ScaleResult(m.stimuli, S - origin, t - origin, clipped)


def satisfaction(scores: Sequence[UsabilityScores], m: RatingMatrix,
                 policy: ClipPolicy = ClipPolicy.CLIP) -> list[UsabilityScores]:
    labels = [(s.service_id, s.environment_id) for s in scores]
    if sorted(labels) != sorted(m.stimuli) or len(set(labels)) != len(labels):
        extra = sorted(set(m.stimuli) - set(labels))
        lacking = sorted(set(labels) - set(m.stimuli))
        raise LabelMismatch(f"rated stimuli and score rows differ: unscored {extra}, unrated {lacking}")
    fit = fit_scale(m, policy)
    return [replace(s, S=fit.value((s.service_id, s.environment_id))) for s in scores]
