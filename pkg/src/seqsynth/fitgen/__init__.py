"""Conditional fit-and-generate methods."""

from __future__ import annotations

import numpy as np

from .base import (
    METHOD_KINDS,
    PARAMETRIC,
    CartControls,
    FitError,
    FittedGenerator,
    MethodSpec,
    SeparationWarning,
    bandwidth,
    empirical_sample,
    fit_empirical,
)
from .cart import apply_tree, cart_generate, fit_cart, tree_depth
from .linear import draw_norm, fit_ols, generate_norm, generate_normrank, rank_replace
from .logistic import (
    coef_se,
    draw_multinomial,
    fit_logit,
    fit_polyreg,
    generate_categorical,
    predict_proba,
)

__all__ = [
    "METHOD_KINDS", "PARAMETRIC", "CartControls", "FitError", "FittedGenerator", "MethodSpec",
    "SeparationWarning", "apply_tree", "bandwidth", "cart_generate", "coef_se", "draw_posterior",
    "empirical_sample", "fit", "fit_cart", "fit_empirical", "fit_logit", "fit_ols", "fit_polyreg",
    "generate", "generate_categorical", "generate_norm", "generate_normrank", "predict_proba",
    "rank_replace", "tree_depth",
]


def fit(method: MethodSpec, y, X, categorical: bool) -> FittedGenerator:
    """Fit ``method`` to ``y`` given design ``X`` (ignored by ``empirical``)."""
    kind = method.kind
    if kind == "empirical":
        return fit_empirical(y, method)
    if kind in ("norm", "normrank"):
        return fit_ols(y, X, method)
    if kind == "logit":
        return fit_logit(y, X, method)
    if kind == "polyreg":
        return fit_polyreg(y, X, method)
    return fit_cart(y, X, method.cart_controls, categorical=categorical, method=method)


def draw_posterior(fit: FittedGenerator, rng) -> FittedGenerator:
    """Attach one parameter draw for proper (posterior-predictive) synthesis.

    Parametric fits draw from their large-sample posterior; CART and empirical
    fits are refitted on a with-replacement bootstrap of their fitting rows.
    """
    if not fit.method.proper:
        raise FitError("draw_posterior needs a fit made with proper=True")
    kind = fit.method.kind
    if kind in ("norm", "normrank"):
        return fit.with_draw(draw_norm(fit, rng))
    if kind in ("logit", "polyreg"):
        return fit.with_draw(draw_multinomial(fit, rng))
    y, X = fit.data
    idx = rng.integers(0, len(y), size=len(y))
    if kind == "empirical":
        return fit.with_draw({"donors": np.asarray(y)[idx], "bootstrap": idx})
    refit = fit_cart(np.asarray(y)[idx], X.take(idx), fit.method.cart_controls,
                     categorical=fit.params["categorical"], method=fit.method)
    draw = dict(refit.params)
    draw["bootstrap"] = idx
    return fit.with_draw(draw)


def generate(fit: FittedGenerator, Xnew, rng, k: int | None = None):
    """Generate one synthetic value per row of ``Xnew`` (or ``k`` values for empirical)."""
    kind = fit.method.kind
    if kind == "empirical":
        n = k if k is not None else Xnew.rows
        return empirical_sample(fit.active["donors"], n, rng, fit.method.smoothing)
    if kind == "norm":
        return generate_norm(fit, Xnew, rng)
    if kind == "normrank":
        return generate_normrank(fit, Xnew, fit.params["donors"], rng)
    if kind in ("logit", "polyreg"):
        return generate_categorical(fit, Xnew, rng)
    return cart_generate(fit, Xnew, rng)
