"""Pooling per-replicate estimates and variance estimators for synthetic data.

Notation: ``qbar`` is the mean of the replicate estimates, ``vbar`` the mean of
their estimated variances and ``b`` the between-replicate variance (divisor
M - 1). ``k`` is the synthetic and ``n`` the observed sample size.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.stats import norm

from . import fitgen
from .tabular import DataTable, encode_design

ESTIMATORS = ("vbar", "Ts", "TsPPD", "Tp", "TM", "TMadj", "TsDE")
NEEDS_B = ("Tp", "TM", "TMadj")


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class PerSynthesisEstimates:
    q: np.ndarray
    v: np.ndarray
    k: int
    n: int
    names: tuple = ()

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=np.float64))
        v = np.atleast_2d(np.asarray(self.v, dtype=np.float64))
        if q.shape != v.shape:
            raise ValueError(f"q {q.shape} and v {v.shape} differ in shape")
        if np.any(v < 0):
            raise ValueError("per-replicate variances must be non-negative")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)

    @property
    def M(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True)
class PooledStats:
    qbar: np.ndarray
    vbar: np.ndarray
    b: np.ndarray | None
    M: int


def pool(per: PerSynthesisEstimates) -> PooledStats:
    M = per.M
    b = per.q.var(axis=0, ddof=1) if M > 1 else None
    return PooledStats(per.q.mean(axis=0), per.v.mean(axis=0), b, M)


def _m(p: PooledStats, M):
    return p.M if M is None else M


def _b(p: PooledStats, name: str):
    if p.b is None or p.M < 2:
        raise EstimatorError(f"{name} needs M >= 2 replicates (between-synthesis variance undefined)")
    return p.b


def var_TM(p: PooledStats, M: int | None = None):
    """b(1 + 1/M) - vbar; can be negative."""
    M = _m(p, M)
    return _b(p, "T_M") * (1 + 1 / M) - p.vbar


def var_Ts(p: PooledStats, k, n, M: int | None = None):
    """vbar (k/n + 1/M): complete synthesis without posterior draws."""
    M = _m(p, M)
    return p.vbar * (k / n + 1 / M)


def var_TsPPD(p: PooledStats, k, n, M: int | None = None):
    """vbar (k/n + (1 + k/n)/M): complete synthesis with posterior draws."""
    M = _m(p, M)
    return p.vbar * (k / n + (1 + k / n) / M)


def var_Tp(p: PooledStats, k, n, M: int | None = None):
    """vbar k/n + b/M."""
    M = _m(p, M)
    return p.vbar * (k / n) + _b(p, "T_p") / M


def var_TsDE(p: PooledStats, k, n, M: int | None = None, DE: float = 1.0):
    """vbar (DE k/n + 1/M) with an approximate design effect."""
    if not DE > 0:
        raise EstimatorError("design effect must be positive")
    M = _m(p, M)
    return p.vbar * (DE * k / n + 1 / M)


def var_TM_adjusted(p: PooledStats, k, n, M: int | None = None):
    """T_M where positive, otherwise the floor vbar k/n."""
    tm = var_TM(p, M)
    return np.where(tm > 0, tm, p.vbar * (k / n))


@dataclass(frozen=True)
class CombinedEstimate:
    estimate: np.ndarray
    variance: np.ndarray
    estimator_name: str
    ci_level: float
    lower: np.ndarray
    upper: np.ndarray
    negative_variance: np.ndarray
    adjusted: np.ndarray
    names: tuple = ()
    notes: tuple = ()

    @property
    def se(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(self.variance >= 0, np.sqrt(np.abs(self.variance)), np.nan)

    def rows(self) -> list:
        """One dict per coefficient (CSV-ready)."""
        out = []
        se = self.se
        for j in range(self.estimate.size):
            flags = []
            if self.negative_variance[j]:
                flags.append("negative_variance")
            if self.adjusted[j]:
                flags.append("adjusted")
            out.append({
                "coefficient": self.names[j] if self.names else str(j),
                "estimate": self.estimate[j],
                "se": se[j],
                "ci_low": self.lower[j],
                "ci_high": self.upper[j],
                "estimator": self.estimator_name,
                "flags": ";".join(flags),
            })
        return out


def estimator_variance(name: str, p: PooledStats, k, n, DE: float = 1.0):
    if name not in ESTIMATORS:
        raise EstimatorError(f"unknown estimator {name!r}; choose from {ESTIMATORS}")
    if name == "vbar":
        return p.vbar
    if name == "Ts":
        return var_Ts(p, k, n)
    if name == "TsPPD":
        return var_TsPPD(p, k, n)
    if name == "Tp":
        return var_Tp(p, k, n)
    if name == "TM":
        return var_TM(p)
    if name == "TMadj":
        return var_TM_adjusted(p, k, n)
    return var_TsDE(p, k, n, DE=DE)


def z_interval(estimate, variance, ci_level: float = 0.95):
    """estimate +/- z sqrt(variance); nan bounds where the variance is negative."""
    z = norm.ppf(0.5 + ci_level / 2)
    variance = np.asarray(variance, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        half = np.where(variance >= 0, z * np.sqrt(np.abs(variance)), np.nan)
    return estimate - half, estimate + half


def combine(per: PerSynthesisEstimates, estimator: str = "Ts", ci_level: float = 0.95,
            DE: float = 1.0) -> CombinedEstimate:
    p = pool(per)
    var = np.asarray(estimator_variance(estimator, p, per.k, per.n, DE), dtype=np.float64)
    neg = var < 0 if estimator == "TM" else np.zeros(var.shape, dtype=bool)
    adj = (var_TM(p) <= 0) if estimator == "TMadj" else np.zeros(var.shape, dtype=bool)
    lo, hi = z_interval(p.qbar, var, ci_level)
    return CombinedEstimate(p.qbar, var, estimator, ci_level, lo, hi, neg, adj, per.names)


# ---------------------------------------------------------------- analysis models


class ModelError(ValueError):
    pass


_TERM = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


@dataclass(frozen=True)
class AnalysisSpec:
    """A regression model: ``"Y ~ A + B + A:B"`` (``A*B`` expands to ``A + B + A:B``).

    ``family`` is ``"linear"`` or ``"logistic"``; for a categorical response
    ``positive`` names the level modelled as 1 (default: second declared level).
    """

    formula: str
    family: str = "linear"
    positive: str | None = None
    response: str = field(init=False)
    terms: tuple = field(init=False)

    def __post_init__(self):
        if self.family not in ("linear", "logistic"):
            raise ModelError(f"unknown family {self.family!r}")
        if "~" not in self.formula:
            raise ModelError(f"formula {self.formula!r} lacks '~'")
        lhs, rhs = (s.strip() for s in self.formula.split("~", 1))
        if not _TERM.match(lhs):
            raise ModelError(f"bad response {lhs!r}")
        terms = []
        for part in (t.strip() for t in rhs.split("+")):
            if not part or part == "1":
                continue
            if "*" in part:
                names = [x.strip() for x in part.split("*")]
                expanded = [(x,) for x in names] + [tuple(names)]
            else:
                expanded = [tuple(x.strip() for x in part.split(":"))]
            for t in expanded:
                if not all(_TERM.match(x) for x in t):
                    raise ModelError(f"bad term {part!r}")
                if t not in terms:
                    terms.append(t)
        object.__setattr__(self, "response", lhs)
        object.__setattr__(self, "terms", tuple(terms))

    @property
    def variables(self) -> list:
        out = [self.response]
        for t in self.terms:
            out.extend(x for x in t if x not in out)
        return out


def model_matrix(table: DataTable, spec: AnalysisSpec):
    """(y, X, column names) for complete cases of the model's continuous variables."""
    schema = table.schema
    for v in spec.variables:
        if v not in schema:
            raise ModelError(f"model variable {v!r} not in schema")
    rows = np.ones(table.n_rows, dtype=bool)
    for v in spec.variables:
        if not schema[v].is_categorical:
            rows &= ~table.missing(v)
    sub = table.take(np.flatnonzero(rows))
    resp = schema[spec.response]
    if resp.is_categorical:
        if spec.family != "logistic":
            raise ModelError(f"categorical response {spec.response!r} needs family=logistic")
        pos = spec.positive if spec.positive is not None else resp.all_levels[1]
        if pos not in resp.all_levels:
            raise ModelError(f"positive level {pos!r} not a level of {spec.response!r}")
        y = (sub.labels(spec.response) == pos).astype(np.float64)
    else:
        y = sub.values(spec.response).astype(np.float64)
    blocks = {}
    for t in spec.terms:
        for x in t:
            if x not in blocks:
                D = encode_design(sub.select([x]), [x])
                # complete cases leave indicators at 0; absent levels give empty dummies
                keep = [j for j in range(1, D.n_columns)
                        if not D.column_names[j].endswith("[missing]") and D.matrix[:, j].any()]
                blocks[x] = (D.matrix[:, keep], [D.column_names[j] for j in keep])
    cols = [np.ones(sub.n_rows)]
    names = ["(Intercept)"]
    for t in spec.terms:
        mat, nm = blocks[t[0]]
        for x in t[1:]:
            m2, n2 = blocks[x]
            mat = np.einsum("ij,ik->ijk", mat, m2).reshape(sub.n_rows, -1)
            nm = [f"{a}:{b}" for a in nm for b in n2]
        cols.append(mat)
        names.extend(nm)
    return y, np.column_stack(cols), tuple(names)


def fit_model(table: DataTable, spec: AnalysisSpec):
    """(coefficients, their variances, names, warnings) for ``spec`` on ``table``."""
    y, X, names = model_matrix(table, spec)
    notes = []
    try:
        fitgen.linear.check_rank(X, names)
        if spec.family == "linear":
            f = fitgen.fit_ols(y, X)
            return f.params["beta"], f.params["sigma2"] * np.diag(f.params["xtx_inv"]), names, notes
        if np.unique(y).size < 2:
            raise ModelError("logistic response has a single class")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            f = fitgen.fit_logit(y, X)
        notes.extend(str(w.message) for w in caught)
        return f.params["B"][:, 0], np.diag(f.params["cov"]).copy(), names, notes
    except fitgen.FitError as e:
        raise ModelError(str(e)) from None


def replicate_estimates(replicates: Sequence[DataTable], spec: AnalysisSpec, k: int | None = None,
                        n: int | None = None):
    """Fit ``spec`` to every replicate; returns (PerSynthesisEstimates, notes)."""
    if not replicates:
        raise ModelError("no replicates")
    qs, vs, notes = [], [], []
    names = None
    for l, rep in enumerate(replicates, start=1):
        try:
            q, v, nm, w = fit_model(rep, spec)
        except ModelError as e:
            raise ModelError(f"replicate {l}: {e}") from None
        if names is not None and nm != names:
            raise ModelError(f"replicate {l}: coefficient set differs from replicate 1")
        names = nm
        qs.append(q)
        vs.append(np.clip(v, 0, None))
        notes.extend(f"replicate {l}: {m}" for m in w)
    k = k if k is not None else replicates[0].n_rows
    n = n if n is not None else k
    return PerSynthesisEstimates(np.array(qs), np.array(vs), k, n, names), notes


def analyze_synthetic(replicates: Sequence[DataTable], model: AnalysisSpec, estimator: str = "Ts",
                      k: int | None = None, n: int | None = None, ci_level: float = 0.95,
                      DE: float = 1.0) -> CombinedEstimate:
    """Fit ``model`` to each replicate as if it were observed data and pool.

    ``estimator="vbar"`` gives the practice-mode interval (the variance an
    analyst would expect from the real data).
    """
    if estimator not in ESTIMATORS:
        raise EstimatorError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    if estimator in NEEDS_B and len(replicates) < 2:
        raise EstimatorError(f"{estimator} needs M >= 2 replicates")
    per, notes = replicate_estimates(replicates, model, k, n)
    out = combine(per, estimator, ci_level, DE)
    return replace(out, notes=tuple(notes))
