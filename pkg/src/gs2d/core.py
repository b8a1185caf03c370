"""Gaussian parameterization, activations, and pointwise evaluation.

Parameter arrays are stored structure-of-arrays style as ``(N, 9)`` float64
blocks.  Columns are shared between raw and activated blocks::

    0 alpha   1 mu_x   2 mu_y   3 sigma_x   4 sigma_y   5 rho   6..8 rgb

For the raw block, columns 1-2 hold the offset from the reference position.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

RHO_EPS = 1e-4
NPARAM = 9

ALPHA, MU_X, MU_Y, SIGMA_X, SIGMA_Y, RHO = 0, 1, 2, 3, 4, 5
COLOR = slice(6, 9)

# parameter classes, used for reporting and freezing
PARAM_CLASSES = {
    "alpha": [ALPHA],
    "position": [MU_X, MU_Y],
    "sigma": [SIGMA_X, SIGMA_Y],
    "rho": [RHO],
    "color": [6, 7, 8],
}
COLUMN_CLASS = {c: name for name, cols in PARAM_CLASSES.items() for c in cols}


class ValidationError(ValueError):
    pass


class DegenerateCovarianceError(ValueError):
    pass


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * np.asarray(x, dtype=np.float64)) + 1.0)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class RawGaussianParams:
    raw_alpha: float
    raw_mu_offset: tuple[float, float]
    raw_sigma: tuple[float, float]
    raw_rho: float
    raw_color: tuple[float, float, float]

    def to_array(self) -> np.ndarray:
        return np.array([self.raw_alpha, *self.raw_mu_offset, *self.raw_sigma,
                         self.raw_rho, *self.raw_color], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "RawGaussianParams":
        a = [float(v) for v in a]
        return cls(a[0], (a[1], a[2]), (a[3], a[4]), a[5], (a[6], a[7], a[8]))


@dataclass(frozen=True)
class Gaussian2D:
    alpha: float
    mu: tuple[float, float]
    sigma: tuple[float, float]
    rho: float
    color: tuple[float, float, float]

    def to_array(self) -> np.ndarray:
        return np.array([self.alpha, *self.mu, *self.sigma, self.rho, *self.color],
                        dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "Gaussian2D":
        a = [float(v) for v in a]
        return cls(a[0], (a[1], a[2]), (a[3], a[4]), a[5], (a[6], a[7], a[8]))


def is_perfect_square(m: int) -> bool:
    return m >= 1 and math.isqrt(m) ** 2 == m


def reference_grid(height: int, width: int, density: int) -> np.ndarray:
    """Equal-interval anchors, ``sqrt(m) x sqrt(m)`` per LR pixel, as ``(N, 2)`` (x, y).

    Ordering is row-major over LR pixels, then row-major within each pixel.
    """
    if not is_perfect_square(density):
        raise ValidationError("density must be a perfect square")
    k = math.isqrt(density)
    sub = (np.arange(k, dtype=np.float64) + 0.5) / k
    v, u, j, i = np.meshgrid(np.arange(height), np.arange(width), np.arange(k), np.arange(k),
                             indexing="ij")
    # v: LR row, u: LR col, j: sub-row, i: sub-col
    xs = u + sub[i]
    ys = v + sub[j]
    return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)


@dataclass
class GaussianCloud:
    height: int
    width: int
    density: int
    raw: np.ndarray
    refs: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValidationError("frame size must be positive")
        if not is_perfect_square(self.density):
            raise ValidationError("density must be a perfect square")
        n = self.density * self.height * self.width
        self.raw = np.ascontiguousarray(self.raw, dtype=np.float64).reshape(-1, NPARAM)
        if self.refs is None:
            self.refs = reference_grid(self.height, self.width, self.density)
        self.refs = np.ascontiguousarray(self.refs, dtype=np.float64).reshape(-1, 2)
        if self.raw.shape[0] != n or self.refs.shape[0] != n:
            raise ValidationError(
                f"expected N = m*H*W = {n} gaussians, got raw={self.raw.shape[0]} "
                f"refs={self.refs.shape[0]}")

    @property
    def n(self) -> int:
        return self.raw.shape[0]

    def activated(self) -> np.ndarray:
        return activate_array(self.raw, self.refs)

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(self.height, self.width, self.density,
                             self.raw.copy(), self.refs.copy())


def _check_finite(raw: np.ndarray):
    bad = ~np.isfinite(raw)
    if bad.any():
        col = int(np.argwhere(bad)[0][-1])
        name = ["raw_alpha", "raw_mu_offset", "raw_mu_offset", "raw_sigma", "raw_sigma",
                "raw_rho", "raw_color", "raw_color", "raw_color"][col]
        raise ValidationError(f"non-finite value in {name}")


def activate_array(raw: np.ndarray, refs: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64).reshape(-1, NPARAM)
    _check_finite(raw)
    out = np.empty_like(raw)
    out[:, ALPHA] = sigmoid(raw[:, ALPHA])
    out[:, MU_X:MU_Y + 1] = refs + raw[:, MU_X:MU_Y + 1]
    out[:, SIGMA_X:SIGMA_Y + 1] = sigmoid(raw[:, SIGMA_X:SIGMA_Y + 1])
    out[:, RHO] = (1.0 - RHO_EPS) * np.tanh(raw[:, RHO])
    out[:, COLOR] = sigmoid(raw[:, COLOR])
    return out


def activation_jacobian(raw: np.ndarray) -> np.ndarray:
    """Elementwise derivative of each activated column w.r.t. its raw column."""
    raw = np.asarray(raw, dtype=np.float64).reshape(-1, NPARAM)
    jac = np.ones_like(raw)
    for cols in (ALPHA, slice(SIGMA_X, SIGMA_Y + 1), COLOR):
        s = sigmoid(raw[:, cols])
        jac[:, cols] = s * (1.0 - s)
    t = np.tanh(raw[:, RHO])
    jac[:, RHO] = (1.0 - RHO_EPS) * (1.0 - t * t)
    return jac


def deactivate_array(act: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`activate_array`; saturated values are pulled just inside the range."""
    act = np.asarray(act, dtype=np.float64).reshape(-1, NPARAM)
    tiny = 1e-12
    raw = np.empty_like(act)
    for cols in (ALPHA, slice(SIGMA_X, SIGMA_Y + 1), COLOR):
        raw[:, cols] = logit(np.clip(act[:, cols], tiny, 1.0 - tiny))
    raw[:, MU_X:MU_Y + 1] = act[:, MU_X:MU_Y + 1] - refs
    lim = 1.0 - RHO_EPS
    raw[:, RHO] = np.arctanh(np.clip(act[:, RHO] / lim, -1.0 + tiny, 1.0 - tiny))
    return raw


def activate(raw: RawGaussianParams, ref: Sequence[float]) -> Gaussian2D:
    a = activate_array(raw.to_array()[None], np.asarray(ref, dtype=np.float64)[None])
    return Gaussian2D.from_array(a[0])


def eval_density(g: Gaussian2D, x: float, y: float) -> float:
    sx, sy = g.sigma
    rho = g.rho
    if abs(rho) >= 1.0:
        raise DegenerateCovarianceError("|rho| must be < 1")
    if sx <= 0 or sy <= 0:
        raise ValidationError("sigma must be positive")
    dx = (x - g.mu[0]) / sx
    dy = (y - g.mu[1]) / sy
    d = 1.0 - rho * rho
    q = dx * dx - 2.0 * rho * dx * dy + dy * dy
    return math.exp(-0.5 * q / d) / (2.0 * math.pi * sx * sy * math.sqrt(d))


def eval_contribution(g: Gaussian2D, x: float, y: float) -> tuple[float, float, float]:
    w = g.alpha * eval_density(g, x, y)
    return tuple(w * c for c in g.color)


def random_cloud(rng: np.random.Generator, height: int, width: int, density: int = 1,
                 low: float = -3.0, high: float = 3.0) -> GaussianCloud:
    """Cloud with every raw parameter drawn uniformly from ``[low, high]``."""
    n = density * height * width
    return GaussianCloud(height, width, density, rng.uniform(low, high, (n, NPARAM)))


def grid_shape(n: int) -> tuple[int, int]:
    """Most square ``(H, W)`` with ``H * W == n``."""
    h = math.isqrt(n)
    while n % h:
        h -= 1
    return h, n // h
