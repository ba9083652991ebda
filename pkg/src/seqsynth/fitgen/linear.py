from __future__ import annotations

import numpy as np
from scipy import linalg

from ..tabular import DesignMatrix
from .base import FitError, FittedGenerator, MethodSpec, bandwidth


def _matrix(X):
    return X.matrix if isinstance(X, DesignMatrix) else np.asarray(X, dtype=np.float64)


def _names(X, p):
    return X.column_names if isinstance(X, DesignMatrix) else tuple(f"x{j}" for j in range(p))


def check_rank(A: np.ndarray, names, tol: float | None = None):
    """Raise FitError naming the columns that are linear combinations of others."""
    n, p = A.shape
    if p == 0:
        return
    _, R, piv = linalg.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    tol = tol if tol is not None else max(n, p) * np.finfo(float).eps * (d[0] if d.size else 0.0)
    rank = int((d > tol).sum())
    if rank < p:
        bad = [names[j] for j in sorted(piv[rank:])]
        raise FitError(f"design is rank deficient; collinear column(s): {bad}")


def fit_ols(y, X, method: MethodSpec | None = None) -> FittedGenerator:
    """Least-squares fit with residual variance RSS/(n - p)."""
    method = method or MethodSpec("norm")
    A = _matrix(X)
    y = np.asarray(y, dtype=np.float64)
    n, p = A.shape
    if n != y.size:
        raise FitError("y and X differ in length")
    if n <= p:
        raise FitError(f"need more rows than columns (n={n}, p={p})")
    check_rank(A, _names(X, p))
    Q, R = np.linalg.qr(A)
    beta = linalg.solve_triangular(R, Q.T @ y)
    resid = y - A @ beta
    rss = float(resid @ resid)
    Rinv = linalg.solve_triangular(R, np.eye(p))
    xtx_inv = Rinv @ Rinv.T
    params = {
        "beta": beta,
        "sigma2": rss / (n - p),
        "xtx_inv": xtx_inv,
        "chol": Rinv,  # Rinv @ Rinv.T == (X'X)^-1
        "df": n - p,
        "donors": np.sort(y),
    }
    return FittedGenerator(method, params, data=(y, X))


def draw_norm(fit: FittedGenerator, rng) -> dict:
    """sigma^2 from scaled inverse chi-square(n-p), beta ~ N(beta_hat, sigma^2 (X'X)^-1)."""
    p = fit.params
    df = p["df"]
    s2 = df * p["sigma2"] / rng.chisquare(df)
    beta = p["beta"] + np.sqrt(s2) * (p["chol"] @ rng.standard_normal(p["beta"].size))
    out = dict(p)
    out.update(beta=beta, sigma2=s2)
    return out


def generate_norm(fit: FittedGenerator, Xnew, rng) -> np.ndarray:
    p = fit.active
    A = _matrix(Xnew)
    if A.shape[1] != p["beta"].size:
        raise ValueError(f"Xnew has {A.shape[1]} columns, fit has {p['beta'].size}")
    mu = A @ p["beta"]
    return mu + np.sqrt(p["sigma2"]) * rng.standard_normal(A.shape[0])


def rank_replace(values: np.ndarray, donors: np.ndarray) -> np.ndarray:
    """Give the value of rank r (of k) the donor order statistic at quantile (r-0.5)/k,
    interpolating linearly when k differs from the donor count."""
    k = values.size
    d = np.sort(np.asarray(donors, dtype=np.float64))
    m = d.size
    # position ((2r-1)m - k) / 2k in integer arithmetic so k == m hits donors exactly
    num = (2 * np.arange(1, k + 1, dtype=np.int64) - 1) * m - k
    den = 2 * k
    num = np.clip(num, 0, (m - 1) * den)
    lo, rem = np.divmod(num, den)
    hi = np.minimum(lo + 1, m - 1)
    frac = rem / den
    q = np.where(frac == 0, d[lo], d[lo] + frac * (d[hi] - d[lo]))
    out = np.empty(k)
    out[np.argsort(values, kind="stable")] = q
    return out


def generate_normrank(fit: FittedGenerator, Xnew, donors, rng, smoothing: bool | None = None) -> np.ndarray:
    donors = np.asarray(donors, dtype=np.float64)
    if donors.size == 0:
        raise FitError("empty donor pool")
    smoothing = fit.method.smoothing if smoothing is None else smoothing
    out = rank_replace(generate_norm(fit, Xnew, rng), donors)
    if smoothing:
        out = out + bandwidth(donors) * rng.standard_normal(out.size)
    return out
