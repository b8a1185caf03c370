"""Scale-aware rasterization of Gaussian clouds.

SR pixel ``(x, y)`` samples the continuous field at LR coordinate ``(x/s, y/s)``.
A Gaussian contributes to a pixel only when ``|x/s - mu_x| < r*W`` and
``|y/s - mu_y| < r*H``.  Contributions are plain sums (no compositing),
accumulated per pixel in ascending Gaussian index, so every path here
(tiled, reference, any thread count) produces identical bits.

Images are ``(height, width, 3)`` float64 arrays.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

from .core import NPARAM, DegenerateCovarianceError, GaussianCloud, ValidationError

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is too old for numba; skip it rather than warn on every run
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

# columns of the prepared per-Gaussian table
P_MUX, P_MUY, P_ISX, P_ISY, P_RHO, P_IND, P_NORM, P_R, P_G, P_B, P_ALPHA, P_F0 = range(12)
NPREP = 12


class InvalidConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RenderConfig:
    scale: float = 1.0
    ratio: float = 0.1
    tile: int = 16

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale >= 1.0):
            raise InvalidConfigError(f"scale must be >= 1, got {self.scale}")
        if not (0.0 < self.ratio <= 1.0):
            raise InvalidConfigError(f"ratio must be in (0, 1], got {self.ratio}")
        if int(self.tile) != self.tile or self.tile < 1:
            raise InvalidConfigError(f"tile must be a positive integer, got {self.tile}")

    def output_size(self, height: int, width: int) -> tuple[int, int]:
        oh, ow = int(math.floor(self.scale * height)), int(math.floor(self.scale * width))
        if oh < 1 or ow < 1:
            raise InvalidConfigError("output image would be empty")
        return oh, ow


def set_threads(n: int | None):
    """Set the worker count used by the tile-parallel kernels (clipped to what numba allows)."""
    if n is None:
        return
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def get_threads() -> int:
    return numba.get_num_threads()


def prepare(act: np.ndarray) -> np.ndarray:
    """Per-Gaussian constants used by the kernels; validates the activated table."""
    act = np.asarray(act, dtype=np.float64).reshape(-1, NPARAM)
    if not np.all(np.isfinite(act)):
        raise ValidationError("non-finite gaussian parameters")
    sx, sy, rho = act[:, 3], act[:, 4], act[:, 5]
    if np.any(np.abs(rho) >= 1.0):
        raise DegenerateCovarianceError("|rho| must be < 1")
    if np.any(sx <= 0) or np.any(sy <= 0):
        raise ValidationError("sigma must be positive")
    d = 1.0 - rho * rho
    f0 = 1.0 / (2.0 * np.pi * sx * sy * np.sqrt(d))
    p = np.empty((act.shape[0], NPREP), dtype=np.float64)
    p[:, P_MUX] = act[:, 1]
    p[:, P_MUY] = act[:, 2]
    p[:, P_ISX] = 1.0 / sx
    p[:, P_ISY] = 1.0 / sy
    p[:, P_RHO] = rho
    p[:, P_IND] = 1.0 / d
    p[:, P_NORM] = act[:, 0] * f0
    p[:, P_R:P_B + 1] = act[:, 6:9]
    p[:, P_ALPHA] = act[:, 0]
    p[:, P_F0] = f0
    return p


@njit(cache=True, inline="always")
def _exp_term(p, i, xs, ys):
    a = (xs - p[i, P_MUX]) * p[i, P_ISX]
    b = (ys - p[i, P_MUY]) * p[i, P_ISY]
    rho = p[i, P_RHO]
    q = a * a - 2.0 * rho * a * b + b * b
    return math.exp(-0.5 * q * p[i, P_IND]), a, b, q


@njit(cache=True)
def _axis_range(mu, half, s, n):
    """Inclusive pixel range [lo, hi] along one axis with |k/s - mu| < half; lo > hi if empty."""
    lo_f = (mu - half) * s - 2.0
    hi_f = (mu + half) * s + 2.0
    if not (hi_f >= 0.0 and lo_f <= n - 1.0):
        return 1, 0
    a = 0 if lo_f < 0.0 else int(math.floor(lo_f))
    b = n - 1 if hi_f > n - 1.0 else int(math.ceil(hi_f))
    lo = a
    while lo <= b and not (abs(lo / s - mu) < half):
        lo += 1
    hi = b
    while hi >= lo and not (abs(hi / s - mu) < half):
        hi -= 1
    return lo, hi


@njit(cache=True)
def _ranges(p, s, half_x, half_y, out_h, out_w):
    n = p.shape[0]
    rng = np.empty((n, 4), dtype=np.int64)
    for i in range(n):
        xlo, xhi = _axis_range(p[i, P_MUX], half_x, s, out_w)
        ylo, yhi = _axis_range(p[i, P_MUY], half_y, s, out_h)
        rng[i, 0] = xlo
        rng[i, 1] = xhi
        rng[i, 2] = ylo
        rng[i, 3] = yhi
    return rng


@njit(cache=True)
def _bin(rng, tile, tiles_y, tiles_x):
    ntile = tiles_y * tiles_x
    counts = np.zeros(ntile + 1, dtype=np.int64)
    n = rng.shape[0]
    for i in range(n):
        if rng[i, 0] > rng[i, 1] or rng[i, 2] > rng[i, 3]:
            continue
        for ty in range(rng[i, 2] // tile, rng[i, 3] // tile + 1):
            for tx in range(rng[i, 0] // tile, rng[i, 1] // tile + 1):
                counts[ty * tiles_x + tx + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    idx = np.empty(offsets[-1], dtype=np.int64)
    for i in range(n):
        if rng[i, 0] > rng[i, 1] or rng[i, 2] > rng[i, 3]:
            continue
        for ty in range(rng[i, 2] // tile, rng[i, 3] // tile + 1):
            for tx in range(rng[i, 0] // tile, rng[i, 1] // tile + 1):
                t = ty * tiles_x + tx
                idx[fill[t]] = i
                fill[t] += 1
    return offsets, idx


@njit(cache=True, parallel=True)
def _render_tiles(p, rng, offsets, idx, s, tile, tiles_x, out_h, out_w):
    out = np.zeros((out_h, out_w, 3), dtype=np.float64)
    ntile = offsets.shape[0] - 1
    for t in prange(ntile):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        y0 = ty * tile
        x0 = tx * tile
        y1 = min(y0 + tile, out_h)
        x1 = min(x0 + tile, out_w)
        k0 = offsets[t]
        k1 = offsets[t + 1]
        for y in range(y0, y1):
            ys = y / s
            for x in range(x0, x1):
                xs = x / s
                acc_r = 0.0
                acc_g = 0.0
                acc_b = 0.0
                for k in range(k0, k1):
                    i = idx[k]
                    if x < rng[i, 0] or x > rng[i, 1] or y < rng[i, 2] or y > rng[i, 3]:
                        continue
                    e, a, b, q = _exp_term(p, i, xs, ys)
                    w = p[i, P_NORM] * e
                    acc_r += w * p[i, P_R]
                    acc_g += w * p[i, P_G]
                    acc_b += w * p[i, P_B]
                out[y, x, 0] = acc_r
                out[y, x, 1] = acc_g
                out[y, x, 2] = acc_b
    return out


@njit(cache=True)
def _render_reference(p, s, half_x, half_y, out_h, out_w):
    out = np.zeros((out_h, out_w, 3), dtype=np.float64)
    n = p.shape[0]
    for y in range(out_h):
        ys = y / s
        for x in range(out_w):
            xs = x / s
            acc_r = 0.0
            acc_g = 0.0
            acc_b = 0.0
            for i in range(n):
                if not (abs(xs - p[i, P_MUX]) < half_x and abs(ys - p[i, P_MUY]) < half_y):
                    continue
                e, a, b, q = _exp_term(p, i, xs, ys)
                w = p[i, P_NORM] * e
                acc_r += w * p[i, P_R]
                acc_g += w * p[i, P_G]
                acc_b += w * p[i, P_B]
            out[y, x, 0] = acc_r
            out[y, x, 1] = acc_g
            out[y, x, 2] = acc_b
    return out


@dataclass
class Binning:
    """Per-tile Gaussian index lists in CSR form plus each Gaussian's pixel window."""
    ranges: np.ndarray
    offsets: np.ndarray
    indices: np.ndarray
    tiles_y: int
    tiles_x: int
    tile: int
    out_shape: tuple[int, int]

    def tile_list(self, ty: int, tx: int) -> np.ndarray:
        t = ty * self.tiles_x + tx
        return self.indices[self.offsets[t]:self.offsets[t + 1]]

    @property
    def pair_count(self) -> int:
        r = self.ranges
        w = np.clip(r[:, 1] - r[:, 0] + 1, 0, None)
        h = np.clip(r[:, 3] - r[:, 2] + 1, 0, None)
        return int(np.sum(w * h))


def _as_params(cloud_or_params) -> tuple[np.ndarray, int, int]:
    if isinstance(cloud_or_params, GaussianCloud):
        c = cloud_or_params
        return c.activated(), c.height, c.width
    act, h, w = cloud_or_params
    return np.asarray(act, dtype=np.float64).reshape(-1, NPARAM), int(h), int(w)


def bin_params(act: np.ndarray, height: int, width: int, cfg: RenderConfig,
               prepared: np.ndarray | None = None) -> Binning:
    out_h, out_w = cfg.output_size(height, width)
    p = prepare(act) if prepared is None else prepared
    s = float(cfg.scale)
    rng = _ranges(p, s, cfg.ratio * width, cfg.ratio * height, out_h, out_w)
    tiles_y = -(-out_h // cfg.tile)
    tiles_x = -(-out_w // cfg.tile)
    offsets, idx = _bin(rng, int(cfg.tile), tiles_y, tiles_x)
    return Binning(rng, offsets, idx, tiles_y, tiles_x, int(cfg.tile), (out_h, out_w))


def bin_gaussians(cloud: GaussianCloud, cfg: RenderConfig) -> Binning:
    return bin_params(cloud.activated(), cloud.height, cloud.width, cfg)


def render_accum(act: np.ndarray, height: int, width: int, cfg: RenderConfig,
                 binning: Binning | None = None) -> np.ndarray:
    """Unclamped per-pixel sums for an activated parameter table."""
    p = prepare(act)
    if binning is None:
        binning = bin_params(act, height, width, cfg, prepared=p)
    out_h, out_w = binning.out_shape
    return _render_tiles(p, binning.ranges, binning.offsets, binning.indices,
                         float(cfg.scale), binning.tile, binning.tiles_x, out_h, out_w)


def render(cloud, cfg: RenderConfig, clamp: bool = True) -> np.ndarray:
    """Render a cloud (or an ``(activated, H, W)`` triple) at ``cfg.scale``."""
    act, h, w = _as_params(cloud)
    out = render_accum(act, h, w, cfg)
    return np.clip(out, 0.0, 1.0) if clamp else out


def render_reference(cloud, cfg: RenderConfig, clamp: bool = True) -> np.ndarray:
    # r=1 window keeps it bit-identical to render(ratio=1) even for off-frame Gaussians
    act, h, w = _as_params(cloud)
    out_h, out_w = cfg.output_size(h, w)
    out = _render_reference(prepare(act), float(cfg.scale), 1.0 * w, 1.0 * h, out_h, out_w)
    return np.clip(out, 0.0, 1.0) if clamp else out


def pair_count(cloud, cfg: RenderConfig) -> int:
    act, h, w = _as_params(cloud)
    return bin_params(act, h, w, cfg).pair_count
