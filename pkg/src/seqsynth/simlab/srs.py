"""Simple-random-sample study: multivariate normal population, linear model.

A population of N rows is drawn once per run from a 5-variate normal with unit
variances and common correlation. Each simulation samples n rows, fits the
multivariate normal, generates M synthetic replicates of k rows with and
without a posterior draw, regresses y1 on y2..y5 in each replicate and pools.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import invwishart

from ..combine import PooledStats, var_TM, var_TM_adjusted, var_Tp, var_Ts, var_TsPPD
from .report import SimReport, summarize_arm


@dataclass(frozen=True)
class SrsSimConfig:
    N: int = 50000
    n: int = 500
    k: int = 1000
    M: int = 5
    n_sims: int = 2000
    rho: float = 0.5
    dim: int = 5
    seed: int = 2024
    ci_level: float = 0.95

    def __post_init__(self):
        if not (2 <= self.dim and self.dim + 1 < self.n <= self.N):
            raise ValueError("need dim >= 2 and dim + 1 < n <= N")
        if self.M < 2 or self.k <= self.dim or self.n_sims < 2:
            raise ValueError("need M >= 2, k > dim and n_sims >= 2")


def make_population(cfg: SrsSimConfig) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    cov = np.full((cfg.dim, cfg.dim), cfg.rho)
    np.fill_diagonal(cov, 1.0)
    return rng.multivariate_normal(np.zeros(cfg.dim), cov, size=cfg.N, method="cholesky")


def _ols_batch(Y: np.ndarray):
    """Regress column 0 on the rest (with intercept) for each leading slice."""
    m, k, d = Y.shape
    X = np.concatenate([np.ones((m, k, 1)), Y[..., 1:]], axis=2)
    y = Y[..., 0]
    xtx = X.transpose(0, 2, 1) @ X
    xty = np.einsum("mkp,mk->mp", X, y)
    beta = np.linalg.solve(xtx, xty[..., None])[..., 0]
    resid = y - np.einsum("mkp,mp->mk", X, beta)
    sigma2 = (resid ** 2).sum(axis=1) / (k - d)
    v = sigma2[:, None] * np.diagonal(np.linalg.inv(xtx), axis1=1, axis2=2)
    return beta, v


def population_coefficients(pop: np.ndarray) -> np.ndarray:
    beta, _ = _ols_batch(pop[None])
    return beta[0]


def _one(cfg: SrsSimConfig, pop: np.ndarray, i: int):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, i]))
    obs = pop[rng.choice(cfg.N, cfg.n, replace=False)]
    mean = obs.mean(axis=0)
    S = np.cov(obs, rowvar=False)
    d = cfg.dim
    Z = rng.standard_normal((cfg.M, cfg.k, d))
    plug = mean + Z @ np.linalg.cholesky(S).T
    sig = invwishart.rvs(df=cfg.n - 1, scale=(cfg.n - 1) * S, size=cfg.M, random_state=rng)
    sig = np.reshape(sig, (cfg.M, d, d))
    L = np.linalg.cholesky(sig)
    mu = mean + np.einsum("mij,mj->mi", L, rng.standard_normal((cfg.M, d))) / np.sqrt(cfg.n)
    Z = rng.standard_normal((cfg.M, cfg.k, d))
    proper = mu[:, None, :] + np.einsum("mij,mkj->mki", L, Z)
    return _ols_batch(plug), _ols_batch(proper)


def _pooled(q: np.ndarray, v: np.ndarray) -> PooledStats:
    # q, v: (S, M, p)
    M = q.shape[1]
    return PooledStats(q.mean(axis=1), v.mean(axis=1), q.var(axis=1, ddof=1), M)


def run_srs_simulation(cfg: SrsSimConfig = SrsSimConfig(), threads: int = 1) -> SimReport:
    pop = make_population(cfg)
    truth = population_coefficients(pop)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            res = list(ex.map(lambda i: _one(cfg, pop, i), range(cfg.n_sims)))
    else:
        res = [_one(cfg, pop, i) for i in range(cfg.n_sims)]
    qp = np.array([r[0][0] for r in res])
    vp = np.array([r[0][1] for r in res])
    qq = np.array([r[1][0] for r in res])
    vq = np.array([r[1][1] for r in res])
    k, n = cfg.k, cfg.n
    P = _pooled(qp, vp)
    plug = summarize_arm(P.qbar, {"Ts": var_Ts(P, k, n), "Tp": var_Tp(P, k, n)}, truth, cfg.ci_level)
    Q = _pooled(qq, vq)
    proper = summarize_arm(Q.qbar, {
        "TsPPD": var_TsPPD(Q, k, n), "Tp": var_Tp(Q, k, n),
        "TM": var_TM(Q), "TMadj": var_TM_adjusted(Q, k, n),
    }, truth, cfg.ci_level)
    targets = ("(Intercept)",) + tuple(f"y{j}" for j in range(2, cfg.dim + 1))
    return SimReport("srs", targets, truth, cfg.n_sims, {"plug-in": plug, "proper": proper},
                     asdict(cfg), qbar={"plug-in": P.qbar, "proper": Q.qbar})
