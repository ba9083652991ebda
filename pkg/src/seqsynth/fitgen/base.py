from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

METHOD_KINDS = ("empirical", "norm", "normrank", "logit", "polyreg", "cart")
PARAMETRIC = ("norm", "normrank", "logit", "polyreg")
CATEGORICAL_METHODS = ("logit", "polyreg")
CONTINUOUS_METHODS = ("norm", "normrank")


class FitError(ValueError):
    pass


class SeparationWarning(UserWarning):
    """Logistic / multinomial fit hit separation or sparse cells."""


@dataclass(frozen=True)
class CartControls:
    min_leaf_size: int = 5
    max_depth: int = 30
    min_split_improvement: float = 1e-8

    def __post_init__(self):
        if self.min_leaf_size < 1 or self.max_depth < 0 or self.min_split_improvement < 0:
            raise ValueError(f"invalid CART controls {self}")


@dataclass(frozen=True)
class MethodSpec:
    kind: str = "cart"
    proper: bool = False
    smoothing: bool = False
    cart_controls: CartControls = field(default_factory=CartControls)

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method {self.kind!r}; expected one of {METHOD_KINDS}")

    def check_target(self, categorical: bool, n_levels: int = 0):
        if self.smoothing and categorical:
            raise ValueError("smoothing applies to continuous targets only")
        if categorical and self.kind in CONTINUOUS_METHODS:
            raise ValueError(f"method {self.kind!r} needs a continuous target")
        if not categorical and self.kind in CATEGORICAL_METHODS:
            raise ValueError(f"method {self.kind!r} needs a categorical target")
        if self.kind == "logit" and n_levels != 2:
            raise ValueError("logit requires a binary target")
        if self.kind == "polyreg" and n_levels < 2:
            raise ValueError("polyreg requires at least 2 levels")


@dataclass(frozen=True)
class FittedGenerator:
    """A fitted conditional model.

    ``params`` are the point estimates; ``posterior_draw`` (proper synthesis
    only) replaces them at generation time. ``data`` keeps the fitting rows so
    bootstrap-based draws can refit.
    """

    method: MethodSpec
    params: dict
    posterior_draw: dict | None = None
    warnings: tuple = ()
    data: Any = field(default=None, repr=False, compare=False)

    @property
    def active(self) -> dict:
        if self.method.proper:
            if self.posterior_draw is None:
                raise FitError("proper synthesis requested but no posterior draw was taken")
            return self.posterior_draw
        return self.params

    def with_draw(self, draw: dict) -> "FittedGenerator":
        return replace(self, posterior_draw=draw)


def bandwidth(x: np.ndarray) -> float:
    """Normal-reference bandwidth 0.9 * min(sd, IQR/1.34) * m^(-1/5)."""
    x = np.asarray(x, dtype=np.float64)
    m = x.size
    if m < 2:
        return 0.0
    sd = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    lo = min(sd, (q75 - q25) / 1.34)
    if lo <= 0:
        lo = sd
    return 0.9 * lo * m ** -0.2


def smooth(values: np.ndarray, bw, rng) -> np.ndarray:
    return values + np.asarray(bw) * rng.standard_normal(len(values))


def empirical_sample(donors, k: int, rng, smoothing: bool = False) -> np.ndarray:
    """With-replacement sample of size ``k`` from ``donors``."""
    donors = np.asarray(donors)
    if donors.size == 0:
        raise FitError("empty donor pool")
    out = donors[rng.integers(0, donors.size, size=k)]
    if smoothing:
        out = smooth(out.astype(np.float64), bandwidth(donors), rng)
    return out


def fit_empirical(y, method: MethodSpec | None = None) -> FittedGenerator:
    y = np.asarray(y)
    if y.size == 0:
        raise FitError("empty donor pool")
    method = method or MethodSpec("empirical")
    return FittedGenerator(method, {"donors": y.copy()}, data=(y, None))
