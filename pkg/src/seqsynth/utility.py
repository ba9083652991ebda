"""Observed-versus-synthetic comparisons for the data holder.

Outputs are plain tables meant for external plotting or inspection.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .combine import AnalysisSpec, fit_model, replicate_estimates, pool
from .sdc import strip_label
from .tabular import DataTable, format_number

DEFAULT_BINS = 20


class ComparisonError(ValueError):
    pass


@dataclass(frozen=True)
class MarginalComparison:
    variable: str
    categories: tuple
    observed: np.ndarray
    synthetic: np.ndarray  # averaged over replicates

    @property
    def differences(self) -> np.ndarray:
        return self.synthetic - self.observed

    @property
    def max_abs_difference(self) -> float:
        return float(np.max(np.abs(self.differences))) if self.differences.size else 0.0

    def rows(self) -> list:
        return [{"variable": self.variable, "category": c, "observed": o, "synthetic": s, "difference": s - o}
                for c, o, s in zip(self.categories, self.observed, self.synthetic)]


def _bin_edges(values: np.ndarray, bins: int, width: float | None):
    lo, hi = float(values.min()), float(values.max())
    if width is not None:
        if width <= 0:
            raise ComparisonError("bin width must be positive")
        start = np.floor(lo / width) * width
        n = max(1, int(np.floor((hi - start) / width)) + 1)
        return start + width * np.arange(n + 1)
    if hi == lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, bins + 1)


def _continuous_counts(table: DataTable, var, edges):
    c = table.column(var.name)
    obs = ~c.missing
    idx = np.clip(np.searchsorted(edges, c.values[obs], side="right") - 1, 0, len(edges) - 2)
    counts = np.bincount(idx, minlength=len(edges) - 1).astype(np.float64)
    miss = np.bincount(c.miss[~obs], minlength=len(var.missing_codes)).astype(np.float64)
    return np.concatenate([counts, miss])


def compare_marginals(observed: DataTable, replicates: Sequence[DataTable], variable: str,
                      bins: int = DEFAULT_BINS, width: float | None = None) -> MarginalComparison:
    """Category (or bin) proportions, observed against the replicate average.

    Continuous variables use ``bins`` equal-width bins over the pooled range of
    the observed and synthetic values, or bins of ``width`` when given (e.g. 5
    for five-year age groups). Missing codes are reported as their own rows.
    """
    if not replicates:
        raise ComparisonError("no synthetic replicates given")
    if variable not in observed.schema:
        raise ComparisonError(f"variable {variable!r} not in schema")
    var = observed.schema[variable]
    if var.is_categorical:
        cats = tuple(var.all_levels)
        def counts(t):
            return np.bincount(t.values(variable), minlength=len(cats)).astype(np.float64)
    else:
        pooled = [t.values(variable)[~t.missing(variable)] for t in (observed, *replicates)]
        pooled = np.concatenate(pooled)
        if pooled.size == 0:
            raise ComparisonError(f"{variable!r} has no observed values")
        edges = _bin_edges(pooled, bins, width)
        cats = tuple(f"[{format_number(a)},{format_number(b)})" for a, b in zip(edges[:-1], edges[1:]))
        cats = cats + tuple(f"[missing {c}]" for c in var.code_labels)
        def counts(t):
            return _continuous_counts(t, var, edges)
    def props(t):
        c = counts(t)
        return c / c.sum() if c.sum() > 0 else c
    obs = props(observed)
    syn = np.mean([props(r) for r in replicates], axis=0)
    return MarginalComparison(variable, cats, obs, syn)


@dataclass(frozen=True)
class CoefficientComparison:
    formula: str
    names: tuple
    observed: np.ndarray
    observed_se: np.ndarray
    synthetic: np.ndarray  # qbar over replicates
    synthetic_se: np.ndarray  # sqrt(vbar)
    lower: np.ndarray
    upper: np.ndarray
    M: int

    @property
    def std_diff(self) -> np.ndarray:
        """(qbar - q_obs) / SE_obs."""
        return (self.synthetic - self.observed) / self.observed_se

    @property
    def z_bias(self) -> np.ndarray:
        """Bias check on the synthetic-mean scale SE_obs * sqrt(1/M + 1)."""
        return (self.synthetic - self.observed) / (self.observed_se * np.sqrt(1.0 / self.M + 1.0))

    def rows(self) -> list:
        out = []
        for j, name in enumerate(self.names):
            out.append({
                "coefficient": name,
                "observed": self.observed[j],
                "observed_se": self.observed_se[j],
                "synthetic": self.synthetic[j],
                "synthetic_se": self.synthetic_se[j],
                "ci_low": self.lower[j],
                "ci_high": self.upper[j],
                "std_diff": self.std_diff[j],
                "z_bias": self.z_bias[j],
                "bias_test": "z-test, scale SE_obs*sqrt(1/M+1)",
            })
        return out


def compare_coefficients(observed: DataTable, replicates: Sequence[DataTable], model: AnalysisSpec,
                         ci_level: float = 0.95) -> CoefficientComparison:
    """Observed fit against synthetic qbar with vbar-based intervals."""
    if not replicates:
        raise ComparisonError("no synthetic replicates given")
    q_obs, v_obs, names, _ = fit_model(observed, model)
    per, _ = replicate_estimates([strip_label(r) for r in replicates], model)
    if per.names != names:
        raise ComparisonError("observed and synthetic fits have different coefficient sets")
    p = pool(per)
    z = norm.ppf(0.5 + ci_level / 2)
    se = np.sqrt(p.vbar)
    return CoefficientComparison(model.formula, names, q_obs, np.sqrt(v_obs), p.qbar, se,
                                 p.qbar - z * se, p.qbar + z * se, per.M)


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return "NA" if not np.isfinite(x) else format_number(float(x))
    return str(x)


def write_rows(rows: Sequence[dict], path, comment: str | None = None):
    """Write a list of dicts as CSV; non-finite numbers become NA."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        if not rows:
            return path
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_cell(v) for v in r.values()])
    return path
