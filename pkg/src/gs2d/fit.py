"""Direct per-image optimization of a Gaussian cloud with Adam."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import core
from .core import (ALPHA, COLOR, MU_X, MU_Y, NPARAM, PARAM_CLASSES, RHO, SIGMA_X, SIGMA_Y,
                   GaussianCloud, ValidationError, is_perfect_square)
from .grad import backward_activated, chain_activation, loss_and_grad
from .metrics import psnr, rgb_to_y, ssim
from .raster import RenderConfig, bin_params, render_accum

log = logging.getLogger(__name__)

INIT_ALPHA = 0.5
INIT_SIGMA = 0.4


class FitDivergedError(RuntimeError):
    def __init__(self, step: int, param_class: str):
        super().__init__(f"non-finite loss at step {step} (offending parameters: {param_class})")
        self.step = step
        self.param_class = param_class


@dataclass
class FitConfig:
    density: int = 16
    steps: int = 1000
    lr: float = 2e-3
    lr_milestones: tuple[int, ...] = ()
    loss: str = "l1"
    freeze_position: bool = False
    freeze_sigma: float | None = None
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    train_scale: float = 1.0
    ratio: float = 0.1
    tile: int = 16
    warmup: int = 0
    init_jitter: float = 0.0

    def __post_init__(self):
        if not is_perfect_square(self.density):
            raise ValidationError("density must be a perfect square")
        if self.steps < 1:
            raise ValidationError("steps must be positive")
        if not self.lr > 0:
            raise ValidationError("lr must be positive")
        ms = list(self.lr_milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])) or any(m >= self.steps or m < 0 for m in ms):
            raise ValidationError("lr milestones must be strictly increasing and < steps")
        self.lr_milestones = tuple(ms)
        if self.loss.lower() not in ("l1", "l2"):
            raise ValidationError(f"unknown loss {self.loss!r}")
        if self.freeze_sigma is not None and not (0.0 < self.freeze_sigma < 1.0):
            raise ValidationError("fixed sigma must lie in (0, 1)")
        if self.train_scale < 1.0:
            raise ValidationError("train_scale must be >= 1")

    def render_config(self) -> RenderConfig:
        return RenderConfig(scale=self.train_scale, ratio=self.ratio, tile=self.tile)

    def lr_at(self, step: int) -> float:
        lr = self.lr * 0.5 ** sum(1 for m in self.lr_milestones if step >= m)
        if self.warmup and step < self.warmup:
            lr *= (step + 1) / self.warmup
        return lr

    def frozen_columns(self) -> list[int]:
        cols = []
        if self.freeze_position:
            cols += PARAM_CLASSES["position"]
        if self.freeze_sigma is not None:
            cols += PARAM_CLASSES["sigma"]
        return cols


@dataclass
class FitReport:
    loss_trace: list[float] = field(default_factory=list)
    psnr: float = float("nan")
    ssim: float = float("nan")
    wall_time: float = 0.0
    steps: int = 0

    def lines(self) -> list[str]:
        return [f"steps={self.steps}",
                f"final_loss={self.loss_trace[-1]:.8f}" if self.loss_trace else "final_loss=nan",
                f"psnr_y={self.psnr:.4f}", f"ssim_y={self.ssim:.6f}",
                f"wall_time_s={self.wall_time:.3f}"]


def _pixel_under(target: np.ndarray, refs: np.ndarray, scale: float) -> np.ndarray:
    h, w = target.shape[:2]
    cols = np.clip(np.floor(refs[:, 0] * scale).astype(np.int64), 0, w - 1)
    rows = np.clip(np.floor(refs[:, 1] * scale).astype(np.int64), 0, h - 1)
    return target[rows, cols]


def init_cloud(lr_size: tuple[int, int], cfg: FitConfig, target: np.ndarray | None = None,
               scale: float | None = None) -> GaussianCloud:
    """Gaussians on the equal-interval grid with alpha 0.5, sigma 0.4 and rho 0.

    Colors come from the target pixel under each anchor, divided by ``alpha * m``:
    normalized Gaussians on a grid of ``m`` per unit area sum to about ``m``, so this
    makes the first render match the target's brightness instead of overshooting it.
    """
    h, w = lr_size
    if h < 1 or w < 1:
        raise ValidationError("LR size must be positive")
    m = cfg.density
    refs = core.reference_grid(h, w, m)
    n = refs.shape[0]
    raw = np.zeros((n, NPARAM), dtype=np.float64)
    raw[:, ALPHA] = core.logit(INIT_ALPHA)
    sigma0 = INIT_SIGMA if cfg.freeze_sigma is None else cfg.freeze_sigma
    raw[:, SIGMA_X:SIGMA_Y + 1] = core.logit(sigma0)
    raw[:, RHO] = 0.0
    if target is not None:
        s = cfg.train_scale if scale is None else scale
        col = _pixel_under(np.asarray(target, dtype=np.float64), refs, s) / (INIT_ALPHA * m)
        raw[:, COLOR] = core.logit(np.clip(col, 1e-4, 1.0 - 1e-4))
    if cfg.init_jitter > 0:
        rng = np.random.default_rng(cfg.seed)
        raw[:, MU_X:MU_Y + 1] = rng.uniform(-cfg.init_jitter, cfg.init_jitter, (n, 2))
    return GaussianCloud(h, w, m, raw, refs)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros((n, NPARAM)), np.zeros((n, NPARAM)), 0)


def adam_step(cloud: GaussianCloud, grads: np.ndarray, state: AdamState, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
              frozen: list[int] | tuple[int, ...] = ()) -> tuple[GaussianCloud, AdamState]:
    g = getattr(grads, "d_raw", grads)
    if state.m.shape != cloud.raw.shape:
        raise ValueError("optimizer state does not match cloud size")
    b1, b2 = betas
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    step = lr * mhat / (np.sqrt(vhat) + eps)
    if frozen:
        step[:, list(frozen)] = 0.0
    new = GaussianCloud(cloud.height, cloud.width, cloud.density, cloud.raw - step, cloud.refs)
    return new, AdamState(m, v, t)


def _offending_class(params: np.ndarray, grad: np.ndarray | None = None) -> str:
    for arr in (params, grad):
        if arr is None:
            continue
        bad = ~np.isfinite(arr)
        if bad.any():
            return core.COLUMN_CLASS[int(np.argwhere(bad)[0][1])]
    if np.any(params[:, SIGMA_X:SIGMA_Y + 1] <= 0):
        return "sigma"
    if np.any(np.abs(params[:, RHO]) >= 1):
        return "rho"
    return "unknown"


def fit(target: np.ndarray, lr_size: tuple[int, int], cfg: FitConfig,
        init: GaussianCloud | None = None, callback=None) -> tuple[GaussianCloud, FitReport]:
    """Optimize a cloud so its render at ``cfg.train_scale`` reproduces ``target``."""
    target = np.asarray(target, dtype=np.float64)
    rcfg = cfg.render_config()
    expected = rcfg.output_size(*lr_size)
    if target.shape[:2] != expected:
        raise ValidationError(f"target is {target.shape[:2]}, expected {expected} "
                              f"for LR {lr_size} at scale {cfg.train_scale}")
    cloud = init_cloud(lr_size, cfg, target) if init is None else init.copy()
    frozen = cfg.frozen_columns()
    state = AdamState.zeros(cloud.n)
    report = FitReport()
    h, w = cloud.height, cloud.width
    t0 = time.perf_counter()
    for step in range(cfg.steps):
        try:
            act = cloud.activated()
        except ValidationError:
            raise FitDivergedError(step, _offending_class(cloud.raw)) from None
        try:
            binning = bin_params(act, h, w, rcfg)
            accum = render_accum(act, h, w, rcfg, binning=binning)
        except ValueError:
            raise FitDivergedError(step, _offending_class(act)) from None
        loss, d_img = loss_and_grad(np.clip(accum, 0.0, 1.0), target, cfg.loss)
        if not math.isfinite(loss):
            raise FitDivergedError(step, _offending_class(act))
        report.loss_trace.append(loss)
        d_act = backward_activated(act, h, w, rcfg, d_img, accum=accum, binning=binning)
        g = chain_activation(cloud.raw, d_act)
        if not np.all(np.isfinite(g)):
            raise FitDivergedError(step, _offending_class(cloud.raw, g))
        cloud, state = adam_step(cloud, g, state, cfg.lr_at(step), cfg.betas, cfg.eps, frozen)
        if callback is not None:
            callback(step, loss, cloud)
        if step % 100 == 0:
            log.debug("step %d loss %.6g", step, loss)
    final = np.clip(render_accum(cloud.activated(), h, w, rcfg), 0.0, 1.0)
    report.wall_time = time.perf_counter() - t0
    report.steps = cfg.steps
    ya, yb = rgb_to_y(final), rgb_to_y(target)
    report.psnr = psnr(ya, yb)
    if min(ya.shape) >= 11:
        report.ssim = ssim(ya, yb)
    return cloud, report


def with_overrides(cfg: FitConfig, **kw) -> FitConfig:
    return replace(cfg, **kw)
