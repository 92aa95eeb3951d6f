import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qoeweb.core import Rating
from qoeweb.errors import DegenerateMatrix, DomainError, LabelMismatch
from qoeweb.rng import SplitMix64
from qoeweb.scaling import (ClipPolicy, RatingMatrix, cumulative_proportions, fit_scale, normal_cdf, probit,
                            satisfaction)
from qoeweb.simulator import rating_category
from qoeweb.usability import UsabilityScores


def taylor_phi(x, terms=80):
    """Normal CDF from the power series of the error function."""
    s, term = 0.0, x
    for n in range(terms):
        s += term / (2 * n + 1)
        term *= -x * x / (2 * (n + 1))
    return 0.5 + s / math.sqrt(2 * math.pi)


def bisect_quantile(p, lo=-6.0, hi=6.0):
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if taylor_phi(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def matrix(rows, labels=None):
    labels = labels or [("A", str(i + 1)) for i in range(len(rows))]
    return RatingMatrix(tuple(labels), np.array(rows))


def sampled_matrix(latents, raters, rng, dispersion=1.0):
    rows = []
    for mu in latents:
        row = [0] * 7
        for _ in range(raters):
            row[rating_category(mu + dispersion * rng.normal()) - 1] += 1
        rows.append(row)
    return matrix(rows)


# -- cumulative proportions --------------------------------------------------

def test_cumulative_all_middle_category():
    P = cumulative_proportions(matrix([[0, 0, 0, 35, 0, 0, 0], [5] * 7]))
    assert P[0].tolist() == [0, 0, 0, 1, 1, 1]
    assert P[1] == pytest.approx([k / 7 for k in range(1, 7)], abs=1e-15)


@given(st.lists(st.lists(st.integers(0, 20), min_size=7, max_size=7).filter(lambda r: sum(r) > 0),
                min_size=1, max_size=6))
def test_cumulative_matches_counting(rows):
    P = cumulative_proportions(matrix(rows))
    for j, row in enumerate(rows):
        ratings = [k + 1 for k, c in enumerate(row) for _ in range(c)]
        for k in range(6):
            assert P[j, k] == pytest.approx(sum(r <= k + 1 for r in ratings) / len(ratings), abs=1e-15)


# -- probit ------------------------------------------------------------------

def test_probit_half():
    assert probit(0.5) == 0.0


def test_probit_one_sigma_against_series_oracle():
    p = taylor_phi(1.0)
    assert p == pytest.approx(0.841345, abs=1e-6)
    assert probit(0.841345) == pytest.approx(bisect_quantile(0.841345), abs=1e-9)
    assert probit(0.841345) == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("p", [0.001, 0.02, 0.1, 0.3, 0.45])
def test_probit_oracle_and_symmetry(p):
    assert probit(p) == pytest.approx(bisect_quantile(p), abs=1e-9)
    assert probit(1 - p) == pytest.approx(-probit(p), abs=1e-12)


def test_probit_round_trip_grid():
    grid = (np.arange(10_000) + 0.5) / 10_000
    worst = max(abs(normal_cdf(probit(float(p))) - p) for p in grid)
    assert worst <= 1e-10


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, math.nan])
def test_probit_domain(p):
    with pytest.raises(DomainError):
        probit(p)


# -- fitting -----------------------------------------------------------------

def test_identical_rows_scale_to_zero():
    fit = fit_scale(matrix([[1, 2, 5, 10, 8, 6, 3]] * 4))
    assert np.all(fit.scale_values == 0.0)


def test_dominating_stimulus_scores_higher():
    fit = fit_scale(matrix([[5, 8, 8, 6, 4, 2, 2], [1, 2, 4, 6, 8, 8, 6]]))
    assert fit.scale_values[1] > fit.scale_values[0]


def test_origin_at_minimum():
    rng = SplitMix64(3)
    fit = fit_scale(sampled_matrix([0.4, -0.2, 1.1, 0.0], 35, rng))
    assert fit.scale_values.min() == 0.0
    assert int(np.argmin(fit.scale_values)) == 1


def test_permutation_equivariance():
    rows = [[3, 5, 7, 9, 6, 3, 2], [1, 3, 5, 8, 9, 6, 3], [6, 8, 8, 6, 4, 2, 1]]
    labels = [("A", "1"), ("A", "2"), ("B", "1")]
    base = fit_scale(matrix(rows, labels))
    perm = [2, 0, 1]
    other = fit_scale(matrix([rows[i] for i in perm], [labels[i] for i in perm]))
    for lab in labels:
        assert other.value(lab) == pytest.approx(base.value(lab), abs=1e-12)


@settings(max_examples=30)
@given(st.integers(2, 6))
def test_count_scaling_invariance(factor):
    rows = [[2, 4, 6, 8, 6, 4, 2], [1, 2, 4, 7, 8, 6, 4], [4, 6, 7, 6, 4, 3, 1]]
    base = fit_scale(matrix(rows))
    scaled = fit_scale(matrix([[c * factor for c in r] for r in rows]))
    assert scaled.scale_values == pytest.approx(base.scale_values, abs=1e-12)


def test_clip_policies():
    rows = [[0, 0, 5, 10, 10, 5, 0], [1, 2, 5, 10, 10, 5, 2]]
    clipped = fit_scale(matrix(rows), ClipPolicy.CLIP)
    assert clipped.clipped_cells == 3  # P(<=1), P(<=2) at 0 and P(<=6) at 1
    dropped = fit_scale(matrix(rows), ClipPolicy.DROP)
    assert dropped.clipped_cells == 3 and dropped.scale_values.min() == 0.0
    with pytest.raises(DegenerateMatrix):
        fit_scale(matrix(rows), ClipPolicy.NONE)


def test_single_stimulus_rejected():
    with pytest.raises(DegenerateMatrix):
        fit_scale(matrix([[1, 2, 3, 4, 3, 2, 1]]))


def test_replication_average_recovers_latent_spacing():
    latents = np.array([0.0, 0.3, 0.69])
    rng = SplitMix64(2024)
    fits = [fit_scale(sampled_matrix(latents, 35, rng)).scale_values for _ in range(200)]
    mean_fit = np.mean(fits, axis=0)
    assert np.corrcoef(mean_fit, latents)[0, 1] >= 0.98
    assert np.argsort(mean_fit).tolist() == [0, 1, 2]


# -- satisfaction ------------------------------------------------------------

def _scores(labels):
    return [UsabilityScores(s, e, 1.0, 1.0, 1.0) for s, e in labels]


def _ratings(labels, latents, rng, raters=35):
    out = []
    for (s, e), mu in zip(labels, latents):
        out += [Rating(f"u{i}", s, e, rating_category(mu + rng.normal())) for i in range(raters)]
    return out


def test_satisfaction_ten_cells_min_zero():
    labels = [(s, str(e)) for s in "AB" for e in range(1, 6)]
    latents = [0.693 - 0.124 * (s == "B") - 0.00673 * 10 * (int(e) - 1) for s, e in labels]
    rated = satisfaction(_scores(labels), RatingMatrix.from_ratings(_ratings(labels, latents, SplitMix64(5))))
    values = [r.S for r in rated]
    assert len(values) == 10 and min(values) == 0.0
    assert [(r.service_id, r.environment_id) for r in rated] == labels


def test_satisfaction_planted_ordering():
    labels = [("A", "1"), ("A", "2"), ("B", "1")]
    latents = [0.6, 0.3, 0.0]
    m = RatingMatrix.from_ratings(_ratings(labels, latents, SplitMix64(8), raters=400))
    by = {(r.service_id, r.environment_id): r.S for r in satisfaction(_scores(labels), m)}
    assert by[("A", "1")] > by[("A", "2")] > by[("B", "1")] == 0.0
    assert by[("A", "1")] == pytest.approx(0.6, abs=0.1)


def test_satisfaction_label_mismatch():
    labels = [("A", "1"), ("A", "2")]
    m = RatingMatrix.from_ratings(_ratings(labels, [0, 0.5], SplitMix64(1)))
    with pytest.raises(LabelMismatch):
        satisfaction(_scores([("A", "1"), ("B", "2")]), m)


def test_satisfaction_single_stimulus():
    m = RatingMatrix.from_ratings(_ratings([("A", "1")], [0.0], SplitMix64(1)))
    with pytest.raises(DegenerateMatrix):
        satisfaction(_scores([("A", "1")]), m)


def test_to_dict_shape():
    fit = fit_scale(matrix([[1, 2, 3, 4, 3, 2, 1], [0, 1, 2, 4, 4, 3, 2]]))
    doc = fit.to_dict()
    assert [v["S"] for v in doc["scale_values"]][0] == 0.0
    assert len(doc["boundaries"]) == 6
