"""Y-channel PSNR/SSIM, pixel losses, and the bicubic resampler used to make LR inputs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
CUBIC_A = -0.5


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 studio-swing luma, for RGB in [0, 1]; returns values in [16/255, 235/255]."""
    img = np.asarray(img, dtype=np.float64)
    return (16.0 + 65.481 * img[..., 0] + 128.553 * img[..., 1] + 24.966 * img[..., 2]) / 255.0


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def _crop(a, border):
    if border:
        return a[border:-border, border:-border, ...]
    return a


def psnr(a, b, crop_border: int = 0) -> float:
    """PSNR in dB with peak 1.0; ``inf`` for identical inputs."""
    a, b = _check_pair(a, b)
    a, b = _crop(a, crop_border), _crop(b, crop_border)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    half = len(g) // 2
    out = correlate1d(img, g, axis=0, mode="constant")
    out = correlate1d(out, g, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim_map(a, b) -> np.ndarray:
    a, b = _check_pair(a, b)
    if a.ndim != 2:
        raise ValueError("ssim expects single-channel images")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {a.shape}")
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    g = gaussian_window()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, crop_border: int = 0) -> float:
    a, b = _check_pair(a, b)
    if np.array_equal(a, b):
        return 1.0
    return float(np.mean(ssim_map(_crop(a, crop_border), _crop(b, crop_border))))


def l1(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean(np.abs(a - b)))


def l2(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


@dataclass
class MetricReport:
    psnr_y: float
    ssim_y: float
    l1: float
    l2: float

    @property
    def identical(self) -> bool:
        return math.isinf(self.psnr_y)

    def lines(self) -> list[str]:
        p = "inf" if self.identical else f"{self.psnr_y:.4f}"
        return [f"psnr_y={p}", f"ssim_y={self.ssim_y:.6f}", f"l1={self.l1:.8f}",
                f"l2={self.l2:.8f}"]


def evaluate(a, b, crop_border: int = 0) -> MetricReport:
    """Compare two RGB images on the Y channel (losses on RGB)."""
    a, b = _check_pair(a, b)
    ya, yb = rgb_to_y(a), rgb_to_y(b)
    return MetricReport(psnr(ya, yb, crop_border), ssim(ya, yb, crop_border), l1(a, b), l2(a, b))


# bicubic ---------------------------------------------------------------------

def cubic(x, a: float = CUBIC_A):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2 = x * x
    x3 = x2 * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def resize_weights(in_len: int, out_len: int, antialias: bool = True) -> np.ndarray:
    """Dense ``(out_len, in_len)`` interpolation matrix with replicated edges."""
    scale = out_len / in_len
    shrink = antialias and scale < 1.0
    width = 4.0 / scale if shrink else 4.0
    centers = (np.arange(out_len, dtype=np.float64) + 0.5) / scale - 0.5
    left = np.floor(centers - width / 2.0).astype(np.int64)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = centers[:, None] - idx
    w = scale * cubic(scale * dist) if shrink else cubic(dist)
    w = w / w.sum(axis=1, keepdims=True)
    mat = np.zeros((out_len, in_len), dtype=np.float64)
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, np.clip(idx, 0, in_len - 1).ravel()), w.ravel())
    return mat


def bicubic_resize(img: np.ndarray, out_size: tuple[int, int], antialias: bool = True) -> np.ndarray:
    h, w = int(out_size[0]), int(out_size[1])
    if h < 1 or w < 1:
        raise ValueError("output size must be at least 1x1")
    img = np.asarray(img, dtype=np.float64)
    if img.shape[:2] == (h, w):
        return img.copy()
    wy = resize_weights(img.shape[0], h, antialias)
    wx = resize_weights(img.shape[1], w, antialias)
    if img.ndim == 2:
        out = wy @ img @ wx.T
    else:
        tmp = np.tensordot(wy, img, axes=(1, 0))
        out = np.tensordot(tmp, wx, axes=(1, 1)).transpose(0, 2, 1)
    return np.clip(out, 0.0, 1.0)
