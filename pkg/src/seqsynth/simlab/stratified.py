"""Stratified-sample study: population mean under a stratified design.

Stratum h of the population holds N_h values from N(10h, h^2). Each
simulation draws n_h values per stratum, synthesizes exactly n_h values per
stratum from a normal model (plug-in and with a posterior draw) and estimates
the population mean by the stratified estimator in every replicate.

Random numbers are shared across configurations run with the same seed: the
stratum sample is a prefix of a per-simulation permutation and the synthetic
normal deviates of a shorter sample are a prefix of those of a longer one.
Configurations differing only in n_h are therefore positively correlated,
which is what makes a paired comparison of their variances informative.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..combine import PooledStats, var_TM, var_TM_adjusted, var_Tp, var_Ts, var_TsPPD
from .report import SimReport, summarize_arm


def stratified_mean(samples, N_h):
    """Stratified estimate of the mean and its fpc variance estimate.

    ``samples`` is a sequence of per-stratum value arrays, ``N_h`` the stratum
    population sizes. Returns (sum (N_h/N) ybar_h,
    sum (1 - n_h/N_h) (N_h/N)^2 s_h^2 / n_h).
    """
    N_h = np.asarray(N_h, dtype=np.float64)
    if len(samples) != N_h.size:
        raise ValueError("one sample per stratum required")
    W = N_h / N_h.sum()
    est = var = 0.0
    for y, Nh, w in zip(samples, N_h, W):
        y = np.asarray(y, dtype=np.float64)
        if y.size < 2:
            raise ValueError("each stratum needs at least 2 sampled values")
        est += w * y.mean()
        var += (1 - y.size / Nh) * w ** 2 * y.var(ddof=1) / y.size
    return est, var


def srs_variance(samples, N: int) -> float:
    """Variance of the mean under the simple-random-sample formula, ignoring strata."""
    y = np.concatenate([np.asarray(s, dtype=np.float64) for s in samples])
    return (1 - y.size / N) * y.var(ddof=1) / y.size


@dataclass(frozen=True)
class StratSimConfig:
    H: int = 10
    N_h: int = 1000
    n_h: tuple = (20,) * 10
    M: int = 100
    n_sims: int = 1000
    seed: int = 2024
    ci_level: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "n_h", tuple(int(x) for x in self.n_h))
        if len(self.n_h) != self.H:
            raise ValueError(f"n_h needs {self.H} entries")
        if min(self.n_h) < 2 or max(self.n_h) > self.N_h:
            raise ValueError("need 2 <= n_h <= N_h")
        if self.M < 2 or self.n_sims < 2:
            raise ValueError("need M >= 2 and n_sims >= 2")

    @property
    def n(self) -> int:
        return sum(self.n_h)

    @property
    def N(self) -> int:
        return self.H * self.N_h


def config(number: int, **overrides) -> StratSimConfig:
    """The three standard configurations (1: n_h=20, M=100; 2: M=10; 3: unequal n_h)."""
    base = {
        1: dict(n_h=(20,) * 10, M=100, n_sims=300),
        2: dict(n_h=(20,) * 10, M=10, n_sims=1000),
        3: dict(n_h=tuple(range(11, 30, 2)), M=10, n_sims=1000),
    }
    if number not in base:
        raise ValueError("configuration must be 1, 2 or 3")
    return StratSimConfig(**{**base[number], **overrides})


def make_population(cfg: StratSimConfig) -> list:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    return [rng.normal(10 * h, h, cfg.N_h) for h in range(1, cfg.H + 1)]


def _strat_moments(ybar, s2, n_h, N_h, W):
    """Stratified estimate and fpc variance from per-stratum means/variances (last axis = stratum)."""
    est = (W * ybar).sum(axis=-1)
    var = ((1 - n_h / N_h) * W ** 2 * s2 / n_h).sum(axis=-1)
    return est, var


def run_stratified_simulation(cfg: StratSimConfig = StratSimConfig()) -> SimReport:
    pop = make_population(cfg)
    H, M, S = cfg.H, cfg.M, cfg.n_sims
    n_h = np.array(cfg.n_h, dtype=np.float64)
    N_h = np.full(H, float(cfg.N_h))
    W = N_h / N_h.sum()
    truth = np.array([float(np.dot(W, [p.mean() for p in pop]))])
    ybar_p = np.empty((S, M, H))
    s2_p = np.empty((S, M, H))
    ybar_q = np.empty((S, M, H))
    s2_q = np.empty((S, M, H))
    obs_var = np.empty(S)
    srs_var = np.empty(S)
    for i in range(S):
        samples = []
        for h in range(H):
            nh = cfg.n_h[h]
            perm_s, plug_s, draw_s, prop_s = np.random.SeedSequence([cfg.seed, 1, i, h]).spawn(4)
            perm = np.random.default_rng(perm_s).permutation(cfg.N_h)
            y = pop[h][perm[:nh]]
            samples.append(y)
            m, s = y.mean(), y.std(ddof=1)
            # row-major (nh, M) draws: a smaller nh sees a prefix of the same deviates
            z = np.random.default_rng(plug_s).standard_normal((nh, M)).T
            syn = m + s * z
            ybar_p[i, :, h] = syn.mean(axis=1)
            s2_p[i, :, h] = syn.var(axis=1, ddof=1)
            g = np.random.default_rng(draw_s)
            sig2 = (nh - 1) * s ** 2 / g.chisquare(nh - 1, M)
            mu = m + np.sqrt(sig2 / nh) * g.standard_normal(M)
            z = np.random.default_rng(prop_s).standard_normal((nh, M)).T
            syn = mu[:, None] + np.sqrt(sig2)[:, None] * z
            ybar_q[i, :, h] = syn.mean(axis=1)
            s2_q[i, :, h] = syn.var(axis=1, ddof=1)
        _, obs_var[i] = stratified_mean(samples, N_h)
        srs_var[i] = srs_variance(samples, cfg.N)
    k = n = cfg.n
    arms, qbars = {}, {}
    for arm, (yb, s2) in {"plug-in": (ybar_p, s2_p), "proper": (ybar_q, s2_q)}.items():
        q, v = _strat_moments(yb, s2, n_h, N_h, W)  # (S, M)
        P = PooledStats(q.mean(axis=1)[:, None], v.mean(axis=1)[:, None], q.var(axis=1, ddof=1)[:, None], M)
        if arm == "plug-in":
            est = {"Ts": var_Ts(P, k, n), "Tp": var_Tp(P, k, n)}
        else:
            est = {"TsPPD": var_TsPPD(P, k, n), "Tp": var_Tp(P, k, n), "TM": var_TM(P),
                   "TMadj": var_TM_adjusted(P, k, n)}
        arms[arm] = summarize_arm(P.qbar, est, truth, cfg.ci_level)
        qbars[arm] = P.qbar
    extra = {
        "true_variance": float(((1 - n_h / N_h) * W ** 2 * np.array([p.var(ddof=1) for p in pop]) / n_h).sum()),
        "mean_observed_variance": float(obs_var.mean()),
        "srs_to_stratified_ratio": float(srs_var.mean() / obs_var.mean()),
    }
    cfg_echo = asdict(cfg)
    cfg_echo["n_h"] = list(cfg.n_h)
    return SimReport("stratified", ("mean",), truth, S, arms, cfg_echo, extra, qbars)
