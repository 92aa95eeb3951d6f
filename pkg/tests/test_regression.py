import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from qoeweb.errors import LabelMismatch, MissingRegressor, NoValidSubset, RankDeficient, TooFewRows, ZeroCoefficient
from qoeweb.regression import (DUMMY, RETRANS, Dataset, FittedModel, adjusted_r2, best_subset, build_dataset,
                               crossover_t, equation, load_fixture, ols_fit, predict, t_pvalue, t_quantile)

T_DESIGN = np.array([0.0, 0.0, 2.5, 3.4, 6.8, 0.0, 0.0, 2.9, 3.9, 7.6])
X_DESIGN = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1], dtype=float)
ROWS = tuple((s, str(e)) for s in "AB" for e in range(1, 6))


def t_density_tail(t, df):
    """Two-sided tail by integrating the t density directly."""
    c = math.gamma((df + 1) / 2) / (math.sqrt(df * math.pi) * math.gamma(df / 2))
    tail, _ = integrate.quad(lambda x: c * (1 + x * x / df) ** (-(df + 1) / 2), abs(t), np.inf)
    return 2 * tail


def planted(intercept, bT, bX, noise, seed, extra=None):
    rng = np.random.default_rng(seed)
    y = intercept + bT * T_DESIGN + bX * X_DESIGN + rng.normal(0, noise, 10)
    regs = {RETRANS: T_DESIGN, DUMMY: X_DESIGN, **(extra or {})}
    return Dataset(ROWS, regs, {"E": y})


# -- ols ---------------------------------------------------------------------

def test_exact_line():
    m = ols_fit(np.array([[0.0], [1.0], [2.0]]), np.array([1.0, 3.0, 5.0]))
    assert m.coefficients == pytest.approx((1.0, 2.0), abs=1e-12)
    assert m.r2 == pytest.approx(1.0, abs=1e-12)


def test_four_points_hand_computed():
    # residuals (1, -1, -1, 1) are orthogonal to both design columns
    m = ols_fit(np.array([[0.0], [1.0], [2.0], [3.0]]), np.array([1.9, 0.8, 1.7, 4.6]))
    assert m.coefficients == pytest.approx((0.9, 0.9), abs=1e-12)
    # rss = 4 on 2 df, sum of squared x deviations = 5
    assert m.se[1] == pytest.approx(math.sqrt(4 / 2 / 5), abs=1e-12)


def test_constant_response():
    m = ols_fit(np.array([[0.0], [1.0], [2.0], [4.0]]), np.full(4, 0.7))
    assert m.r2 == 0.0
    assert m.intercept == pytest.approx(0.7, abs=1e-12)
    assert all(math.isnan(p) for p in m.p)


def test_rank_deficient_and_too_few():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    with pytest.raises(RankDeficient):
        ols_fit(np.column_stack([x, 2 * x]), np.array([1.0, 2.0, 2.0, 5.0]))
    with pytest.raises(TooFewRows):
        ols_fit(np.array([[0.0], [1.0]]), np.array([1.0, 2.0]))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ols_properties(seed):
    rng = np.random.default_rng(seed)
    n, p = int(rng.integers(4, 12)), int(rng.integers(1, 3))
    X = rng.normal(size=(n, p))
    y = rng.normal(size=n)
    m = ols_fit(X, y)
    design = np.column_stack([np.ones(n), X])
    resid = y - design @ np.array(m.coefficients)
    assert np.max(np.abs(design.T @ resid)) <= 1e-8 * max(1.0, np.linalg.norm(design) * np.linalg.norm(y))
    assert abs(resid.sum()) <= 1e-9 * max(1.0, np.abs(y).sum())
    assert m.adj_r2 <= m.r2 + 1e-15


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.integers(0, 1000))
def test_zero_noise_recovery(beta, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(8, 2))
    y = beta[0] + X @ np.array(beta[1:])
    assert ols_fit(X, y).coefficients == pytest.approx(tuple(beta), abs=1e-9)


# -- kernels -----------------------------------------------------------------

def test_adjusted_r2_examples():
    assert adjusted_r2(0.95, 10, 2) == pytest.approx(0.93571, abs=1e-5)
    assert adjusted_r2(0.0, 10, 2) == pytest.approx(-0.2857, abs=1e-4)
    with pytest.raises(TooFewRows):
        adjusted_r2(0.5, 3, 2)


def test_t_pvalue_values():
    assert t_pvalue(0.0, 5) == 1.0
    assert t_pvalue(2.228, 10) == pytest.approx(0.050, abs=0.001)
    assert t_pvalue(math.inf, 3) == 0.0


@pytest.mark.parametrize("t, df", [(2.228, 10), (0.7, 3), (4.1, 7), (1.96, 200), (12.0, 2)])
def test_t_pvalue_density_oracle(t, df):
    assert t_pvalue(t, df) == pytest.approx(t_density_tail(t, df), abs=1e-9)
    assert t_pvalue(-t, df) == t_pvalue(t, df)


def test_t_quantile_inverts_pvalue():
    q = t_quantile(0.975, 10)
    assert q == pytest.approx(2.228139, abs=1e-6)
    assert t_pvalue(q, 10) == pytest.approx(0.05, abs=1e-9)


# -- selection ---------------------------------------------------------------

def test_best_subset_excludes_noise_column():
    noise = np.random.default_rng(0).normal(size=10)
    data = planted(0.985, -0.00658, -0.0196, 0.002, seed=1, extra={"noise": noise})
    m = best_subset(data, "E")
    assert set(m.regressors) == {RETRANS, DUMMY}


def test_best_subset_single_perfect_candidate():
    x = np.arange(10.0)
    data = Dataset(ROWS, {"x": x}, {"E": 3.0 - 0.5 * x})
    m = best_subset(data, "E")
    assert m.regressors == ("x",)
    assert m.coefficients == pytest.approx((3.0, -0.5), abs=1e-12)


def test_best_subset_recovers_planted_form():
    data = planted(0.693, -0.00673, -0.124, 0.005, seed=3)
    m = best_subset(data, "E", candidates=[RETRANS, DUMMY])
    assert set(m.regressors) == {RETRANS, DUMMY}
    for name, truth in ((RETRANS, -0.00673), (DUMMY, -0.124)):
        i = m.terms.index(name)
        assert abs(m.coefficients[i] - truth) <= 3 * m.se[i]
    assert m.adj_r2 >= 0.9


def test_best_subset_prunes_to_intercept():
    y = np.random.default_rng(5).normal(size=10)
    x = np.random.default_rng(6).normal(size=10)
    m = best_subset(Dataset(ROWS, {"x": x}, {"E": y}), "E")
    if m.regressors:
        assert m.p[1] < 0.05
    const = best_subset(Dataset(ROWS, {"x": x}, {"E": np.full(10, 0.4)}), "E")
    assert const.regressors == () and const.coefficients == pytest.approx((0.4,), abs=1e-12)


def test_best_subset_too_few_rows():
    data = Dataset((("A", "1"), ("B", "1")), {"a": np.array([0.0, 1.0]), "b": np.array([1.0, 3.0])},
                   {"E": np.array([1.0, 2.0])})
    with pytest.raises(TooFewRows):
        best_subset(data, "E")


def test_best_subset_all_degenerate():
    data = Dataset(ROWS[:4], {"c": np.ones(4)}, {"E": np.array([1.0, 2.0, 2.5, 4.0])})
    with pytest.raises(NoValidSubset):
        best_subset(data, "E")


def test_build_dataset_join():
    qos = [{"service": s, "environment": e, RETRANS: 1.0} for s, e in ROWS]
    usab = [{"service": s, "environment": e, "E": 0.9, "H": 0.1, "S": 0.2} for s, e in ROWS]
    data = build_dataset(qos, usab, "A", [RETRANS])
    assert data.regressors[DUMMY].tolist() == X_DESIGN.tolist()
    with pytest.raises(LabelMismatch):
        build_dataset(qos[:-1], usab, "A", [RETRANS])


# -- fixtures ----------------------------------------------------------------

def test_fixture_predictions():
    assert predict(load_fixture("effectiveness"), {RETRANS: 0, DUMMY: 0}) == pytest.approx(0.985, abs=1e-12)
    assert predict(load_fixture("efficiency"), {DUMMY: 0}) == pytest.approx(0.1764, abs=1e-12)
    assert predict(load_fixture("satisfaction"), {RETRANS: 0, DUMMY: 1}) == pytest.approx(0.569, abs=1e-12)


def test_predict_missing_regressor():
    with pytest.raises(MissingRegressor):
        predict(load_fixture("effectiveness"), {DUMMY: 1})


def test_crossover():
    assert crossover_t(load_fixture("satisfaction")) == pytest.approx(0.124 / 0.00673, abs=1e-12)
    assert crossover_t(load_fixture("satisfaction")) == pytest.approx(18.42, abs=0.01)
    no_dummy = FittedModel("S", (RETRANS,), (0.7, -0.01))
    assert crossover_t(no_dummy) == 0.0
    with pytest.raises(ZeroCoefficient):
        crossover_t(load_fixture("efficiency"))


def test_model_json_round_trip():
    m = ols_fit(np.array([[0.0], [1.0], [2.0], [4.0]]), np.full(4, 0.7), ["x"], "H")
    again = FittedModel.from_dict(m.to_dict())
    assert again.coefficients == m.coefficients and math.isnan(again.p[1])


def test_equation_rendering():
    text = equation(load_fixture("effectiveness"))
    assert text == "E\u0302 = 0.985 - 0.00658·T - 0.0196·X"
