"""Binary and multinomial logistic regression fitted by Newton / IRLS."""

from __future__ import annotations

import warnings

import numpy as np

from ..tabular import DesignMatrix
from .base import FitError, FittedGenerator, MethodSpec, SeparationWarning

MAX_ITER = 50
SCORE_TOL = 1e-8
DEV_TOL = 1e-10
COEF_LIMIT = 30.0
SE_LIMIT = 1000.0


def _matrix(X):
    return X.matrix if isinstance(X, DesignMatrix) else np.asarray(X, dtype=np.float64)


def _logits(A, B):
    eta = A @ B
    return np.column_stack([np.zeros(A.shape[0]), eta])


def _lse(L):
    # row-wise log-sum-exp; scipy's version carries heavy per-call overhead in Newton loops
    # columnwise loop: K is small and axis-1 reductions over thin arrays are slow
    m = L[:, 0].copy()
    for j in range(1, L.shape[1]):
        np.maximum(m, L[:, j], out=m)
    s = np.zeros_like(m)
    for j in range(L.shape[1]):
        s += np.exp(L[:, j] - m)
    return (m + np.log(s))[:, None]


def _deviance(A, B, yi):
    L = _logits(A, B)
    lp = L[np.arange(L.shape[0]), yi] - _lse(L)[:, 0]
    return -2.0 * lp.sum()


def _score_info(A, B, yi, K):
    L = _logits(A, B)
    P = np.exp(L - _lse(L))
    Y = np.zeros_like(P)
    Y[np.arange(P.shape[0]), yi] = 1.0
    R = (Y - P)[:, 1:]
    score = (A.T @ R).T.ravel()  # class-major
    p = A.shape[1]
    H = np.empty(((K - 1) * p, (K - 1) * p))
    for j in range(K - 1):
        for l in range(j, K - 1):
            w = P[:, j + 1] * ((j == l) - P[:, l + 1])
            blk = A.T @ (w[:, None] * A)
            H[j * p:(j + 1) * p, l * p:(l + 1) * p] = blk
            H[l * p:(l + 1) * p, j * p:(j + 1) * p] = blk
    return score, H


def _solve(H, g):
    try:
        return np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(H, g, rcond=None)[0]


def _fit_multinomial(y, X, method, binary):
    A = _matrix(X)
    y = np.asarray(y)
    n, p = A.shape
    if n != y.size:
        raise FitError("y and X differ in length")
    classes = np.unique(y)
    if binary and classes.size > 2:
        raise FitError(f"logit needs a binary target, got {classes.size} levels")
    K = classes.size
    notes = []
    if K < 2:
        params = {"classes": classes, "B": np.zeros((p, 0)), "cov": np.zeros((0, 0)),
                  "converged": True, "iterations": 0}
        return FittedGenerator(method, params, data=(y, X))
    yi = np.searchsorted(classes, y)
    B = np.zeros((p, K - 1))
    dev = _deviance(A, B, yi)
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        score, H = _score_info(A, B, yi, K)
        if np.max(np.abs(score)) < SCORE_TOL:
            converged = True
            break
        step = _solve(H, score).reshape(K - 1, p).T
        t = 1.0
        for _ in range(30):
            Bn = B + t * step
            dn = _deviance(A, Bn, yi)
            if np.isfinite(dn) and dn <= dev + 1e-12 * abs(dev):
                break
            t /= 2
        rel = abs(dev - dn) / (abs(dn) + 0.1)
        B, dev = Bn, dn
        if rel < DEV_TOL:
            # one more Newton step polishes the score at negligible cost
            score, H = _score_info(A, B, yi, K)
            if np.max(np.abs(score)) >= SCORE_TOL:
                Bn = B + _solve(H, score).reshape(K - 1, p).T
                dn = _deviance(A, Bn, yi)
                if np.isfinite(dn) and dn <= dev + 1e-9 * abs(dev):
                    B, dev = Bn, dn
            converged = True
            break
    score, H = _score_info(A, B, yi, K)
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(H)
    if not converged:
        notes.append(f"no convergence in {MAX_ITER} iterations")
    if np.max(np.abs(B)) > COEF_LIMIT:
        notes.append(f"coefficient magnitude above {COEF_LIMIT:g}")
    if np.max(np.sqrt(np.clip(np.diag(cov), 0, None))) > SE_LIMIT:
        notes.append(f"standard error above {SE_LIMIT:g} (zero or near-zero cells)")
    if notes:
        msg = "separation/sparse-cells: " + "; ".join(notes)
        warnings.warn(msg, SeparationWarning, stacklevel=3)
        notes = [msg]
    params = {"classes": classes, "B": B, "cov": cov, "deviance": dev,
              "converged": converged, "iterations": it, "score": score}
    return FittedGenerator(method, params, warnings=tuple(notes), data=(y, X))


def fit_logit(y, X, method: MethodSpec | None = None) -> FittedGenerator:
    """Binary logistic regression; the larger code is the modelled event."""
    return _fit_multinomial(y, X, method or MethodSpec("logit"), binary=True)


def fit_polyreg(y, X, method: MethodSpec | None = None) -> FittedGenerator:
    """Multinomial logit with the first observed level as baseline."""
    return _fit_multinomial(y, X, method or MethodSpec("polyreg"), binary=False)


def coef_se(fit: FittedGenerator) -> np.ndarray:
    return np.sqrt(np.clip(np.diag(fit.params["cov"]), 0, None))


def draw_multinomial(fit: FittedGenerator, rng) -> dict:
    """Coefficients from N(MLE, inverse observed information)."""
    p = fit.params
    B = p["B"]
    if B.size == 0:
        return dict(p)
    cov = 0.5 * (p["cov"] + p["cov"].T)
    w, V = np.linalg.eigh(cov)
    z = V @ (np.sqrt(np.clip(w, 0, None)) * rng.standard_normal(w.size))
    out = dict(p)
    out["B"] = B + z.reshape(B.shape[1], B.shape[0]).T
    return out


def predict_proba(fit: FittedGenerator, Xnew) -> np.ndarray:
    p = fit.active
    A = _matrix(Xnew)
    if p["B"].size == 0:
        return np.ones((A.shape[0], 1))
    if A.shape[1] != p["B"].shape[0]:
        raise ValueError(f"Xnew has {A.shape[1]} columns, fit has {p['B'].shape[0]}")
    L = _logits(A, p["B"])
    return np.exp(L - _lse(L))


def sample_rows(P: np.ndarray, rng) -> np.ndarray:
    """Index drawn independently from each row's probability vector."""
    c = np.cumsum(P, axis=1)
    u = rng.random(P.shape[0]) * c[:, -1]
    return np.minimum((c < u[:, None]).sum(axis=1), P.shape[1] - 1)


def generate_categorical(fit: FittedGenerator, Xnew, rng) -> np.ndarray:
    P = predict_proba(fit, Xnew)
    assert np.allclose(P.sum(axis=1), 1.0)
    return fit.active["classes"][sample_rows(P, rng)]
