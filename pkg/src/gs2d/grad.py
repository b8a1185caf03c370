"""Analytic backward pass through the rasterizer, plus a finite-difference oracle."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from . import core
from .core import NPARAM, PARAM_CLASSES, GaussianCloud
from .raster import (P_ALPHA, P_F0, P_IND, P_ISX, P_ISY, P_RHO, P_R, P_G, P_B,
                     Binning, RenderConfig, _exp_term, bin_params, prepare, render_accum)


@njit(cache=True, parallel=True)
def _backward_tiles(p, rng, offsets, idx, s, tile, tiles_x, gpix):
    out_h, out_w = gpix.shape[0], gpix.shape[1]
    tgrad = np.zeros((idx.shape[0], 9), dtype=np.float64)
    ntile = offsets.shape[0] - 1
    for t in prange(ntile):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        y0 = ty * tile
        x0 = tx * tile
        y1 = min(y0 + tile, out_h)
        x1 = min(x0 + tile, out_w)
        for y in range(y0, y1):
            ys = y / s
            for x in range(x0, x1):
                xs = x / s
                g_r = gpix[y, x, 0]
                g_g = gpix[y, x, 1]
                g_b = gpix[y, x, 2]
                if g_r == 0.0 and g_g == 0.0 and g_b == 0.0:
                    continue
                for k in range(offsets[t], offsets[t + 1]):
                    i = idx[k]
                    if x < rng[i, 0] or x > rng[i, 1] or y < rng[i, 2] or y > rng[i, 3]:
                        continue
                    e, a, b, q = _exp_term(p, i, xs, ys)
                    f = p[i, P_F0] * e
                    alpha = p[i, P_ALPHA]
                    w = alpha * f
                    gw = g_r * p[i, P_R] + g_g * p[i, P_G] + g_b * p[i, P_B]
                    gf = gw * w
                    rho = p[i, P_RHO]
                    ind = p[i, P_IND]
                    tgrad[k, 0] += gw * f
                    tgrad[k, 1] += gf * (a - rho * b) * ind * p[i, P_ISX]
                    tgrad[k, 2] += gf * (b - rho * a) * ind * p[i, P_ISY]
                    tgrad[k, 3] += gf * ((a * a - rho * a * b) * ind - 1.0) * p[i, P_ISX]
                    tgrad[k, 4] += gf * ((b * b - rho * a * b) * ind - 1.0) * p[i, P_ISY]
                    tgrad[k, 5] += gf * (rho * ind + a * b * ind - rho * q * ind * ind)
                    tgrad[k, 6] += g_r * w
                    tgrad[k, 7] += g_g * w
                    tgrad[k, 8] += g_b * w
    return tgrad


@njit(cache=True)
def _merge(tgrad, idx, n):
    # sequential, ascending tile order: reproducible regardless of thread count
    out = np.zeros((n, 9), dtype=np.float64)
    for k in range(idx.shape[0]):
        i = idx[k]
        for c in range(9):
            out[i, c] += tgrad[k, c]
    return out


@dataclass
class GradientBuffer:
    """Per-Gaussian partials, columns laid out like the raw parameter block."""
    d_raw: np.ndarray

    @property
    def d_raw_alpha(self):
        return self.d_raw[:, 0]

    @property
    def d_raw_mu_offset(self):
        return self.d_raw[:, 1:3]

    @property
    def d_raw_sigma(self):
        return self.d_raw[:, 3:5]

    @property
    def d_raw_rho(self):
        return self.d_raw[:, 5]

    @property
    def d_raw_color(self):
        return self.d_raw[:, 6:9]


def clamp_mask(accum: np.ndarray) -> np.ndarray:
    return ((accum > 0.0) & (accum < 1.0)).astype(np.float64)


def backward_activated(act: np.ndarray, height: int, width: int, cfg: RenderConfig,
                       d_output: np.ndarray, accum: np.ndarray | None = None,
                       binning: Binning | None = None, clamp: bool = True) -> np.ndarray:
    """Gradient w.r.t. the activated table (alpha, mu, sigma, rho, rgb)."""
    p = prepare(act)
    if binning is None:
        binning = bin_params(act, height, width, cfg, prepared=p)
    d_output = np.asarray(d_output, dtype=np.float64)
    if d_output.shape != (*binning.out_shape, 3):
        raise ValueError(f"d_output shape {d_output.shape} does not match render output "
                         f"{(*binning.out_shape, 3)}")
    gpix = d_output
    if clamp:
        if accum is None:
            accum = render_accum(act, height, width, cfg, binning=binning)
        gpix = d_output * clamp_mask(accum)
    tgrad = _backward_tiles(p, binning.ranges, binning.offsets, binning.indices,
                            float(cfg.scale), binning.tile, binning.tiles_x,
                            np.ascontiguousarray(gpix))
    return _merge(tgrad, binning.indices, p.shape[0])


def chain_activation(raw: np.ndarray, d_act: np.ndarray) -> np.ndarray:
    return d_act * core.activation_jacobian(raw)


def backward_render(cloud: GaussianCloud, cfg: RenderConfig, d_output: np.ndarray,
                    accum: np.ndarray | None = None, clamp: bool = True) -> GradientBuffer:
    """dL/d(raw) given per-pixel dL/d(output) of the clamped render."""
    d_act = backward_activated(cloud.activated(), cloud.height, cloud.width, cfg,
                               d_output, accum=accum, clamp=clamp)
    return GradientBuffer(chain_activation(cloud.raw, d_act))


# losses --------------------------------------------------------------------

def loss_and_grad(img: np.ndarray, target: np.ndarray, kind: str = "l1"):
    """Mean loss over all pixels and channels, and its gradient w.r.t. ``img``."""
    kind = kind.lower()
    res = img - target
    n = res.size
    if kind == "l1":
        return float(np.abs(res).sum() / n), np.sign(res) / n
    if kind == "l2":
        return float((res * res).sum() / n), 2.0 * res / n
    raise ValueError(f"unknown loss {kind!r}")


# finite-difference oracle ----------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: dict = field(default_factory=dict)
    worst: tuple | None = None  # (class, gaussian index, column, analytic, numeric)
    rtol: float = 1e-4
    atol: float = 1e-8
    small: float = 1e-6

    @property
    def passed(self) -> bool:
        return all(v < self.rtol for v in self.max_rel_err.values())


def _err(analytic, numeric, rtol, atol, small):
    """Error normalized so that < rtol means pass for either regime."""
    diff = abs(analytic - numeric)
    if abs(analytic) < small:
        return diff / atol * rtol
    return diff / max(abs(analytic), abs(numeric))


def _single_accum(act_row, height, width, cfg):
    return render_accum(act_row[None], height, width, cfg)


def _pattern(act_row, accum, target, height, width, cfg, kind):
    rng = bin_params(act_row[None], height, width, cfg).ranges[0]
    pat = [tuple(rng.tolist()), clamp_mask(accum).tobytes()]
    if kind == "l1":
        pat.append(np.sign(np.clip(accum, 0, 1) - target).tobytes())
    return pat


def numeric_partial(cloud: GaussianCloud, cfg: RenderConfig, i: int, col: int,
                    weigh, accum: np.ndarray, h: float = 1e-5,
                    pattern_of=None, max_halvings: int = 30) -> float:
    """Central difference of a scalar loss w.r.t. one raw parameter.

    Only Gaussian ``i`` changes, so the perturbed image is ``accum - own + own'``
    with ``own`` rendered by the forward kernel alone.  ``weigh(img)`` maps a
    clamped image to the loss.  When the step would cross a pruning edge, clamp
    edge or L1 kink, ``h`` is halved so both samples stay on the smooth piece
    the analytic derivative describes.
    """
    raw_row = cloud.raw[i].copy()
    ref = cloud.refs[i:i + 1]
    act0 = core.activate_array(raw_row[None], ref)[0]
    own0 = _single_accum(act0, cloud.height, cloud.width, cfg)
    base = accum - own0
    p0 = pattern_of(act0, accum) if pattern_of else None
    for _ in range(max_halvings + 1):
        imgs = []
        pats = []
        for sgn in (1.0, -1.0):
            rr = raw_row.copy()
            rr[col] += sgn * h
            act = core.activate_array(rr[None], ref)[0]
            acc = base + _single_accum(act, cloud.height, cloud.width, cfg)
            imgs.append(acc)
            if pattern_of:
                pats.append(pattern_of(act, acc))
        if not pattern_of or all(pt == p0 for pt in pats):
            break
        h *= 0.5
    return weigh(imgs[0], imgs[1]) / (2.0 * h)


def finite_diff_check(cloud: GaussianCloud, cfg: RenderConfig, loss: str = "l2",
                      target: np.ndarray | None = None, h: float = 1e-5,
                      rtol: float = 1e-4, atol: float = 1e-8,
                      d_output: np.ndarray | None = None) -> GradCheckReport:
    """Compare ``backward_render`` against central differences for every raw parameter.

    With ``d_output`` given, the loss is the linear functional ``sum(d_output * img)``
    and ``loss``/``target`` are ignored.
    """
    report = GradCheckReport(rtol=rtol, atol=atol)
    if cloud.n == 0:
        return report
    act = cloud.activated()
    accum = render_accum(act, cloud.height, cloud.width, cfg)
    if d_output is not None:
        kind = "linear"
        d_img = np.asarray(d_output, dtype=np.float64)

        def weigh(a, b):
            return float(np.sum(d_img * (np.clip(a, 0, 1) - np.clip(b, 0, 1))))
    else:
        kind = loss.lower()
        if target is None:
            raise ValueError("target required for loss-based check")
        _, d_img = loss_and_grad(np.clip(accum, 0, 1), target, kind)
        n = target.size
        if kind == "l1":
            def weigh(a, b):
                return float(np.sum(np.abs(np.clip(a, 0, 1) - target)
                                    - np.abs(np.clip(b, 0, 1) - target)) / n)
        else:
            def weigh(a, b):
                ra = np.clip(a, 0, 1) - target
                rb = np.clip(b, 0, 1) - target
                return float(np.sum((ra - rb) * (ra + rb)) / n)

    analytic = backward_render(cloud, cfg, d_img, accum=accum).d_raw

    def pattern_of(act_row, acc):
        return _pattern(act_row, acc, target if kind == "l1" else None,
                        cloud.height, cloud.width, cfg, kind)

    worst_err = -1.0
    for name, cols in PARAM_CLASSES.items():
        report.max_rel_err[name] = 0.0
        for i in range(cloud.n):
            for col in cols:
                num = numeric_partial(cloud, cfg, i, col, weigh, accum, h=h,
                                      pattern_of=pattern_of)
                e = _err(analytic[i, col], num, rtol, atol, 1e-6)
                if e > report.max_rel_err[name]:
                    report.max_rel_err[name] = e
                if e > worst_err:
                    worst_err = e
                    report.worst = (name, i, col, float(analytic[i, col]), num)
    return report
