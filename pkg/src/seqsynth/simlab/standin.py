"""Simulated stand-in for a confidential longitudinal census extract.

Four variables: sex, age, marital status (under-16s are always single) and a
long-term illness flag. The generating model has the same shape as the
parametric synthesis models (logistic/multinomial logits, normal age given
sex), so parametric synthesis satisfies the assumed-synthesizing-distribution
condition for the main-effects illness model unless an interaction is added.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..combine import AnalysisSpec, fit_model, pool, replicate_estimates, var_TM, var_Tp, var_Ts, var_TsPPD
from ..engine import SynthesisPlan, synthesize
from ..rules import Rule
from ..tabular import DataTable, Schema
from ..utility import compare_coefficients

SEX_LEVELS = ("Male", "Female")
MSTAT_LEVELS = ("Single", "Married", "Remarried", "Divorced", "Widowed")
ILL_LEVELS = ("Yes", "No")

STANDIN_SCHEMA = Schema.from_dicts([
    {"name": "SEX9", "kind": "categorical", "levels": list(SEX_LEVELS)},
    {"name": "AGE9", "kind": "continuous"},
    {"name": "MSTAT9", "kind": "categorical", "levels": list(MSTAT_LEVELS)},
    {"name": "ILL9", "kind": "categorical", "levels": list(ILL_LEVELS)},
])

UNDER16_RULE = Rule("AGE9 < 16", "MSTAT9", "Single")
MAIN_EFFECTS = AnalysisSpec("ILL9 ~ AGE9 + SEX9 + MSTAT9", family="logistic", positive="No")
INTERACTION = AnalysisSpec("ILL9 ~ AGE9 + SEX9 * MSTAT9", family="logistic", positive="No")

# multinomial logits against Single: intercept, age slope (per year over 40), female
_MSTAT_COEF = np.array([
    [0.8, 0.04, 0.1],     # Married
    [-1.8, 0.05, -0.2],   # Remarried
    [-1.2, 0.02, 0.3],    # Divorced
    [-3.0, 0.10, 0.9],    # Widowed
])
# P(ILL9 = No): intercept, age over 40, female, then one term per non-single status
_ILL_COEF = np.array([1.6, -0.045, 0.25, 0.35, 0.25, -0.3, 0.2])
# female x status (Married, Remarried, Divorced, Widowed) when an interaction is requested
_ILL_INTERACTION = np.array([-0.7, -0.5, 0.4, -0.4])


def make_standin(n: int, rng, interaction: bool = False) -> DataTable:
    female = rng.random(n) < 0.52
    age = np.clip(np.round(rng.normal(44 + 2 * female, 20)), 0, 100)
    a = (age - 40) / 1.0
    eta = _MSTAT_COEF[:, 0] + np.outer(a, _MSTAT_COEF[:, 1]) + np.outer(female, _MSTAT_COEF[:, 2])
    logits = np.column_stack([np.zeros(n), eta])
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    u = rng.random(n)
    mstat = (u[:, None] > np.cumsum(p, axis=1)[:, :-1]).sum(axis=1)
    mstat[age < 16] = 0
    dummies = np.eye(5)[mstat][:, 1:]
    lin = _ILL_COEF[0] + _ILL_COEF[1] * a + _ILL_COEF[2] * female + dummies @ _ILL_COEF[3:]
    if interaction:
        lin += female * (dummies @ _ILL_INTERACTION)
    no = rng.random(n) < 1 / (1 + np.exp(-lin))
    return DataTable.from_columns(STANDIN_SCHEMA, {
        "SEX9": np.where(female, 1, 0),
        "AGE9": age,
        "MSTAT9": mstat,
        "ILL9": no.astype(np.int64),
    })


def standin_plan(proper: bool = False, M: int = 10, seed: int = 0, method: str = "parametric") -> SynthesisPlan:
    """Sex, age, marital status, illness in that order; under-16s forced single."""
    return SynthesisPlan.default(STANDIN_SCHEMA, method=method, rules=(UNDER16_RULE,), proper=proper, M=M,
                                 seed=seed)


@dataclass(frozen=True)
class RatioStudyConfig:
    n: int = 20000
    M: int = 10
    n_reps: int = 200
    seed: int = 2024
    method: str = "parametric"


@dataclass(frozen=True)
class RatioStudyResult:
    names: tuple
    ratios: dict  # estimator -> (n_reps, p), nan where TM < 0
    config: dict

    def mean_ratio(self, estimator: str) -> np.ndarray:
        """Per-coefficient mean over repetitions (nan entries skipped)."""
        return np.nanmean(self.ratios[estimator], axis=0)

    def grand_mean(self, estimator: str) -> float:
        return float(np.nanmean(self.ratios[estimator]))

    def rows(self) -> list:
        out = []
        for j, name in enumerate(self.names):
            row = {"coefficient": name}
            for e, r in self.ratios.items():
                row[f"sqrt({e})/se_obs"] = float(np.nanmean(r[:, j])) if np.isfinite(r[:, j]).any() else np.nan
            row["TM_negative"] = int(np.isnan(self.ratios["TM"][:, j]).sum())
            out.append(row)
        return out


def ratio_one(cfg: RatioStudyConfig, rep: int):
    """Ratios for one repetition: plug-in Ts, proper TsPPD, Tp and TM (nan if negative)."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3, rep]))
    obs = make_standin(cfg.n, rng)
    _, v_obs, names, _ = fit_model(obs, MAIN_EFFECTS)
    se_obs = np.sqrt(v_obs)
    k = n = cfg.n
    out = {}
    for proper in (False, True):
        plan = standin_plan(proper, cfg.M, seed=int(rng.integers(2 ** 31)), method=cfg.method)
        syn = synthesize(obs, plan)
        per, _ = replicate_estimates(syn.replicates, MAIN_EFFECTS, k, n)
        p = pool(per)
        if proper:
            out["TsPPD"] = var_TsPPD(p, k, n)
            out["Tp"] = var_Tp(p, k, n)
            out["TM"] = var_TM(p)
        else:
            out["Ts"] = var_Ts(p, k, n)
    with np.errstate(invalid="ignore"):
        return names, {e: np.where(T >= 0, np.sqrt(np.abs(T)), np.nan) / se_obs for e, T in out.items()}


def run_ratio_study(cfg: RatioStudyConfig = RatioStudyConfig()) -> RatioStudyResult:
    res = [ratio_one(cfg, r) for r in range(cfg.n_reps)]
    names = res[0][0]
    ratios = {e: np.array([r[1][e] for r in res]) for e in ("Ts", "TsPPD", "Tp", "TM")}
    return RatioStudyResult(names, ratios, asdict(cfg))


def interaction_shrinkage(seed: int, n: int = 5000, M: int = 5) -> np.ndarray:
    """Whether each sex-by-status coefficient shrinks toward 0 under interaction-free synthesis.

    Observed data carry an interaction; the parametric synthesis models only
    main effects. Returns a boolean per interaction coefficient:
    |qbar_M| < |q_obs|.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    obs = make_standin(n, rng, interaction=True)
    syn = synthesize(obs, standin_plan(False, M, seed=seed))
    cc = compare_coefficients(obs, syn.replicates, INTERACTION)
    idx = [j for j, nm in enumerate(cc.names) if ":" in nm]
    return np.abs(cc.synthetic[idx]) < np.abs(cc.observed[idx])
