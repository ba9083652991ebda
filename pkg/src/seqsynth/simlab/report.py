"""Monte-Carlo summaries shared by the simulation studies."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.stats import norm

from ..tabular import format_number

# TM coverage cannot be formed when some TM < 0; "TM>0" conditions on positive cases.
POSITIVE_TM = "TM>0"


@dataclass(frozen=True)
class ArmSummary:
    """Per-target summary of one arm (plug-in or proper) of a simulation."""

    empirical_variance: np.ndarray
    empirical_variance_se: np.ndarray
    mean_estimate: np.ndarray
    bias_se: np.ndarray
    estimator_mean: Mapping[str, np.ndarray]
    estimator_variance: Mapping[str, np.ndarray]
    coverage: Mapping[str, np.ndarray]  # percent, nan where undefined
    negative_fraction: np.ndarray | None = None
    n_positive: np.ndarray | None = None


@dataclass(frozen=True)
class SimReport:
    name: str
    targets: tuple
    truth: np.ndarray
    n_sims: int
    arms: Mapping[str, ArmSummary]
    config: Mapping[str, object]
    extra: Mapping[str, object] = field(default_factory=dict)
    qbar: Mapping[str, np.ndarray] = field(default_factory=dict, repr=False)  # per-simulation pooled estimates

    def variance_ratio(self, arm: str, num: str, den: str) -> np.ndarray:
        """var over simulations of estimator ``num`` divided by that of ``den``."""
        a = self.arms[arm]
        return a.estimator_variance[num] / a.estimator_variance[den]

    def rows(self) -> list:
        out = []
        for arm, s in self.arms.items():
            for j, t in enumerate(self.targets):
                base = {"arm": arm, "target": t}
                out.append({**base, "quantity": "simulation_variance", "estimator": "",
                            "value": s.empirical_variance[j], "mc_se": s.empirical_variance_se[j]})
                out.append({**base, "quantity": "mean_estimate", "estimator": "",
                            "value": s.mean_estimate[j], "mc_se": s.bias_se[j]})
                for e in s.estimator_mean:
                    out.append({**base, "quantity": "estimator_mean", "estimator": e,
                                "value": s.estimator_mean[e][j], "mc_se": np.nan})
                    out.append({**base, "quantity": "estimator_variance", "estimator": e,
                                "value": s.estimator_variance[e][j], "mc_se": np.nan})
                    c = s.coverage[e][j]
                    out.append({**base, "quantity": "coverage", "estimator": e, "value": c,
                                "mc_se": np.sqrt(c * (100 - c) / self.n_sims) if np.isfinite(c) else np.nan})
                if s.negative_fraction is not None:
                    out.append({**base, "quantity": "negative_TM_fraction", "estimator": "TM",
                                "value": s.negative_fraction[j], "mc_se": np.nan})
        return out


def _var_se(x: np.ndarray):
    """Sample variance (ddof=1) and its large-sample standard error."""
    S = x.shape[0]
    d = x - x.mean(axis=0)
    var = (d ** 2).sum(axis=0) / (S - 1)
    m4 = (d ** 4).mean(axis=0)
    return var, np.sqrt(np.maximum(m4 - var ** 2, 0) / S)


def summarize_arm(qbar: np.ndarray, estimators: Mapping[str, np.ndarray], truth: np.ndarray,
                  ci_level: float = 0.95) -> ArmSummary:
    """Aggregate per-simulation pooled estimates and variance estimates.

    ``estimators`` maps names to (S, p) arrays of variance estimates. When a
    ``TM`` entry is present its negative fraction is reported and a ``TM>0``
    entry conditioned on the positive cases is added.
    """
    qbar = np.atleast_2d(qbar)
    S = qbar.shape[0]
    z = norm.ppf(0.5 + ci_level / 2)
    var, var_se = _var_se(qbar)
    est_mean, est_var, cover = {}, {}, {}
    err = np.abs(qbar - truth)

    def cov(T, rows):
        with np.errstate(invalid="ignore"):
            hit = err <= z * np.sqrt(np.where(T >= 0, T, np.nan))
        n = rows.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, 100.0 * (hit & rows).sum(axis=0) / n, np.nan)

    neg = npos = None
    for name, T in estimators.items():
        T = np.atleast_2d(T)
        est_mean[name] = T.mean(axis=0)
        est_var[name] = T.var(axis=0, ddof=1)
        ok = T >= 0
        c = cov(T, np.ones_like(ok))
        cover[name] = np.where(ok.all(axis=0), c, np.nan)
        if name == "TM":
            neg = (~(T > 0)).mean(axis=0)
            pos = T > 0
            npos = pos.sum(axis=0)
            with np.errstate(invalid="ignore", divide="ignore"):
                est_mean[POSITIVE_TM] = np.where(npos > 0, (T * pos).sum(axis=0) / npos, np.nan)
                sq = ((T - est_mean[POSITIVE_TM]) ** 2 * pos).sum(axis=0)
                est_var[POSITIVE_TM] = np.where(npos > 1, sq / (npos - 1), np.nan)
            cover[POSITIVE_TM] = cov(T, pos)
    return ArmSummary(var, var_se, qbar.mean(axis=0), np.sqrt(var / S), est_mean, est_var, cover, neg, npos)


def paired_variance_difference(a: np.ndarray, b: np.ndarray):
    """var(a) - var(b) for paired simulation draws, with its Monte-Carlo SE.

    Draws must come from common random numbers for the pairing to help; the SE
    is the standard error of the mean of the paired squared-deviation differences.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    S = a.shape[0]
    d = (a - a.mean(axis=0)) ** 2 - (b - b.mean(axis=0)) ** 2
    diff = d.sum(axis=0) / (S - 1)
    return diff, d.std(axis=0, ddof=1) / np.sqrt(S)


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, float, np.integer, np.floating)):
        return format_number(float(x)) if np.isfinite(x) else "NA"
    return str(x)


def write_report(report: SimReport, path):
    """Long-format CSV: arm, target, quantity, estimator, value, mc_se."""
    path = Path(path)
    rows = report.rows()
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "target", "quantity", "estimator", "value", "mc_se"])
        for r in rows:
            w.writerow([_cell(v) for v in r.values()])
    return path


def write_table(report: SimReport, path, quantity: str = "coverage"):
    """Wide table: one row per target, one column per arm/estimator."""
    path = Path(path)
    cols = []
    for arm, s in report.arms.items():
        if quantity == "coverage":
            cols += [(f"{arm}:{e}", s.coverage[e]) for e in s.coverage]
        elif quantity == "mean":
            cols += [(f"{arm}:simulation", s.empirical_variance)]
            cols += [(f"{arm}:{e}", s.estimator_mean[e]) for e in s.estimator_mean]
        elif quantity == "variance":
            cols += [(f"{arm}:{e}", s.estimator_variance[e]) for e in s.estimator_variance]
        else:
            raise ValueError(f"unknown table quantity {quantity!r}")
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target"] + [c for c, _ in cols])
        for j, t in enumerate(report.targets):
            w.writerow([t] + [_cell(v[j]) for _, v in cols])
    return path
