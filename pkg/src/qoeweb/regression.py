"""OLS multiple regression with best-subset selection and significance pruning.

Model selection follows a two-stage rule: among all non-empty subsets of the
candidate regressors pick the fit with the highest adjusted R^2, then drop
regressors that are not significant at ``alpha`` one at a time (largest
p-value first), refitting after each removal.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy import special

from .errors import (LabelMismatch, MissingRegressor, NoValidSubset, RankDeficient,
                     TooFewRows, ZeroCoefficient)

INTERCEPT = "const"
DUMMY = "X"
RETRANS = "retrans_pkts_per_s"
RANK_TOL = 1e-10
ALPHA = 0.05
RESPONSES = ("E", "H", "S")


# -- Student t kernels -------------------------------------------------------

def t_pvalue(t: float, df: float) -> float:
    """Two-sided p-value of a t statistic, 2 * (1 - F(|t|; df))."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 0.0
    # P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)
    x = df / (df + t * t)
    return float(special.betainc(df / 2.0, 0.5, x))


def t_cdf(t: float, df: float) -> float:
    tail = 0.5 * t_pvalue(t, df)
    return 1.0 - tail if t >= 0 else tail


def t_quantile(q: float, df: float) -> float:
    if not 0.0 < q < 1.0:
        raise ValueError("quantile level must lie in (0, 1)")
    return float(special.stdtrit(df, q))


def adjusted_r2(r2: float, n: int, p: int) -> float:
    if n <= p + 1:
        raise TooFewRows(f"adjusted R^2 needs n > p + 1 (n={n}, p={p})")
    return 1.0 - (1.0 - r2) * (n - 1) / (n - p - 1)


# -- fitted models -----------------------------------------------------------

@dataclass(frozen=True)
class FittedModel:
    response: str
    regressors: tuple[str, ...]
    coefficients: tuple[float, ...]  # intercept first, then regressors in order
    se: tuple[float, ...] = ()
    t: tuple[float, ...] = ()
    p: tuple[float, ...] = ()
    r2: float = math.nan
    adj_r2: float = math.nan
    n: int = 0

    @property
    def terms(self) -> tuple[str, ...]:
        return (INTERCEPT,) + self.regressors

    @property
    def intercept(self) -> float:
        return self.coefficients[0]

    def coef(self, name: str) -> float:
        try:
            return self.coefficients[self.terms.index(name)]
        except ValueError:
            return 0.0

    def pvalue(self, name: str) -> float:
        return self.p[self.terms.index(name)]

    @property
    def n_regressors(self) -> int:
        return len(self.regressors)

    def to_dict(self) -> dict:
        def named(values):
            if not values:
                return None
            return {k: _json_float(v) for k, v in zip(self.terms, values)}

        return {
            "response": self.response,
            "regressors": list(self.regressors),
            "coefficients": named(self.coefficients),
            "se": named(self.se),
            "t": named(self.t),
            "p": named(self.p),
            "r2": _json_float(self.r2),
            "adj_r2": _json_float(self.adj_r2),
            "n": self.n,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "FittedModel":
        regressors = tuple(doc["regressors"])
        terms = (INTERCEPT,) + regressors

        def unpack(key):
            block = doc.get(key)
            if not block:
                return ()
            return tuple(math.nan if block[k] is None else float(block[k]) for k in terms)

        return cls(
            response=doc["response"],
            regressors=regressors,
            coefficients=unpack("coefficients"),
            se=unpack("se"),
            t=unpack("t"),
            p=unpack("p"),
            r2=_from_json_float(doc.get("r2")),
            adj_r2=_from_json_float(doc.get("adj_r2")),
            n=int(doc.get("n") or 0),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


def _json_float(v: float):
    return None if v is None or not math.isfinite(v) else float(v)


def _from_json_float(v) -> float:
    return math.nan if v is None else float(v)


def ols_fit(X: np.ndarray, y: np.ndarray, names: Sequence[str] = (), response: str = "y") -> FittedModel:
    """Least squares fit of ``y`` on ``X`` plus an intercept column.

    ``X`` holds the regressors only (n x p, p may be 0). Rank is checked with a
    column-pivoted QR against ``RANK_TOL * ||[1 X]||``.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    X = np.asarray(X, dtype=float).reshape(n, -1)
    p = X.shape[1]
    names = tuple(names) if names else tuple(f"x{j}" for j in range(p))
    if len(names) != p:
        raise ValueError("one name per regressor column required")
    if n <= p + 1:
        raise TooFewRows(f"need more than {p + 1} rows for {p} regressors, got {n}")
    design = np.column_stack([np.ones(n), X])
    q, r, perm = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag.min() <= RANK_TOL * np.linalg.norm(design):
        raise RankDeficient(f"design for {names} is rank deficient")

    beta_perm = scipy.linalg.solve_triangular(r, q.T @ y)
    beta = np.empty(p + 1)
    beta[perm] = beta_perm
    resid = y - design @ beta
    rss = float(resid @ resid)
    centered = y - y.mean()
    tss = float(centered @ centered)
    df = n - p - 1

    r_inv = scipy.linalg.solve_triangular(r, np.eye(p + 1))
    cov_perm = r_inv @ r_inv.T
    cov_unit = np.empty_like(cov_perm)
    cov_unit[np.ix_(perm, perm)] = cov_perm
    sigma2 = rss / df
    se = np.sqrt(np.diag(cov_unit) * sigma2)

    scale = max(float(np.max(np.abs(y))), 1.0)
    if tss <= (n * np.finfo(float).eps * scale) ** 2:
        # constant response: total variation is zero, R^2 := 0 and no term is testable
        r2 = 0.0
        tstat = np.full(p + 1, math.nan)
        pval = np.full(p + 1, math.nan)
    else:
        r2 = min(max(1.0 - rss / tss, 0.0), 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            tstat = np.where(se > 0, beta / se, np.copysign(np.inf, beta))
        tstat = np.where((se == 0) & (beta == 0), 0.0, tstat)
        pval = np.array([t_pvalue(float(tv), df) for tv in tstat])

    return FittedModel(
        response=response,
        regressors=names,
        coefficients=tuple(float(b) for b in beta),
        se=tuple(float(s) for s in se),
        t=tuple(float(v) for v in tstat),
        p=tuple(float(v) for v in pval),
        r2=r2,
        adj_r2=adjusted_r2(r2, n, p),
        n=n,
    )


# -- datasets and model selection -------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """One row per (service, environment); regressor and response columns by name."""

    rows: tuple[tuple[str, str], ...]
    regressors: dict[str, np.ndarray]
    responses: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.rows)
        for name, col in {**self.regressors, **self.responses}.items():
            if len(col) != n:
                raise ValueError(f"column {name} has {len(col)} values for {n} rows")
            if not np.all(np.isfinite(col)):
                raise ValueError(f"column {name} has missing values")

    @property
    def candidates(self) -> tuple[str, ...]:
        return tuple(self.regressors)

    def design(self, names: Sequence[str]) -> np.ndarray:
        if not names:
            return np.empty((len(self.rows), 0))
        return np.column_stack([self.regressors[n] for n in names])


def build_dataset(qos_rows: Sequence[Mapping[str, float]], usability_rows: Sequence[Mapping[str, float]],
                  reference_service: str, metrics: Sequence[str]) -> Dataset:
    """Join QoS and usability tables on (service, environment).

    Rows are mappings with ``service`` and ``environment`` keys. The service
    dummy ``X`` is 0 for ``reference_service`` and 1 otherwise.
    """
    qos_index = {(r["service"], r["environment"]): r for r in qos_rows}
    usab_index = {(r["service"], r["environment"]): r for r in usability_rows}
    missing_q = sorted(set(usab_index) - set(qos_index))
    missing_u = sorted(set(qos_index) - set(usab_index))
    if missing_q or missing_u:
        raise LabelMismatch(f"cannot join tables: no QoS row for {missing_q}, no usability row for {missing_u}")
    keys = sorted(qos_index)
    regs = {m: np.array([float(qos_index[k][m]) for k in keys]) for m in metrics}
    regs[DUMMY] = np.array([0.0 if k[0] == reference_service else 1.0 for k in keys])
    resp = {r: np.array([float(usab_index[k][r]) for k in keys]) for r in RESPONSES if r in usab_index[keys[0]]}
    return Dataset(tuple(keys), regs, resp)


def _selection_key(model: FittedModel):
    return (-model.adj_r2, model.n_regressors, tuple(sorted(model.regressors)))


def best_subset(data: Dataset, response: str, candidates: Sequence[str] | None = None,
                alpha: float = ALPHA) -> FittedModel:
    """Exhaustive adjusted-R^2 search followed by backward significance pruning."""
    y = data.responses[response]
    names = tuple(candidates) if candidates is not None else data.candidates
    if not names:
        raise ValueError("at least one candidate regressor is required")
    best: FittedModel | None = None
    too_few = rank_def = 0
    for k in range(1, len(names) + 1):
        for subset in itertools.combinations(names, k):
            try:
                model = ols_fit(data.design(subset), y, subset, response)
            except TooFewRows:
                too_few += 1
                continue
            except RankDeficient:
                rank_def += 1
                continue
            if best is None or _selection_key(model) < _selection_key(best):
                best = model
    if best is None:
        if rank_def == 0:
            raise TooFewRows(f"{len(y)} rows are too few for any candidate subset")
        raise NoValidSubset(f"every candidate subset for {response} is degenerate")
    return prune(data, best, alpha)


def prune(data: Dataset, model: FittedModel, alpha: float = ALPHA) -> FittedModel:
    y = data.responses[model.response]
    while model.regressors:
        pvals = [(1.0 if math.isnan(pv) else pv, name)
                 for name, pv in zip(model.regressors, model.p[1:])]
        worst_p, worst = max(pvals)
        if worst_p < alpha:
            break
        kept = tuple(n for n in model.regressors if n != worst)
        model = ols_fit(data.design(kept), y, kept, model.response)
    return model


def predict(model: FittedModel, inputs: Mapping[str, float]) -> float:
    missing = [n for n in model.regressors if n not in inputs]
    if missing:
        raise MissingRegressor(f"no value for {missing}")
    value = model.intercept
    for name, coef in zip(model.regressors, model.coefficients[1:]):
        value += coef * inputs[name]
    return value


def crossover_t(model: FittedModel, t_name: str = RETRANS, dummy_name: str = DUMMY) -> float:
    """Retransmission rate at which the reference service's prediction drops to the
    other service's prediction at zero retransmissions: |coef(X)| / |coef(T)|."""
    ct = model.coef(t_name)
    if ct == 0.0:
        raise ZeroCoefficient(f"{t_name} has no effect in model for {model.response}")
    return abs(model.coef(dummy_name)) / abs(ct)


SYMBOLS = {RETRANS: "T", DUMMY: "X"}


def equation(model: FittedModel, symbols: Mapping[str, str] = SYMBOLS, digits: int = 4) -> str:
    """Render e.g. ``Ê = 0.985 - 0.00658·T - 0.0196·X``."""
    text = f"{model.response}̂ = {model.intercept:.{digits}g}"
    for name, coef in zip(model.regressors, model.coefficients[1:]):
        sign = "-" if coef < 0 else "+"
        text += f" {sign} {abs(coef):.{digits}g}·{symbols.get(name, name)}"
    return text


# -- reference models --------------------------------------------------------

def load_fixture(name: str) -> FittedModel:
    """Published reference model: ``effectiveness``, ``efficiency`` or ``satisfaction``."""
    text = resources.files("qoeweb.fixtures").joinpath(f"{name}.json").read_text()
    return FittedModel.from_dict(json.loads(text))
