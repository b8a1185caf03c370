"""Rasterization-ratio sweep: wall time, pair count and fidelity against the r=1 render."""
from __future__ import annotations

import time

from .metrics import psnr, rgb_to_y
from .raster import RenderConfig, pair_count, render

DEFAULT_RATIOS = (0.01, 0.1, 0.4, 0.8, 1.0)


def time_render(cloud, cfg: RenderConfig, repeats: int = 3):
    best = float("inf")
    img = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        img = render(cloud, cfg)
        best = min(best, time.perf_counter() - t0)
    return img, best


def run_bench(cloud, scales=(4.0,), ratios=DEFAULT_RATIOS, tile: int = 16,
              repeats: int = 3) -> list[dict]:
    """One row per (scale, ratio); ``cloud`` is a GaussianCloud or ``(activated, H, W)``.

    Repeats are interleaved across ratios and the best time is kept, so slow drift in
    machine load affects every ratio alike.
    """
    # warm up the JIT so the first timed row is not penalized
    render(cloud, RenderConfig(scale=1.0, ratio=min(ratios), tile=tile))
    rows = []
    for s in scales:
        ref_y = rgb_to_y(render(cloud, RenderConfig(scale=s, ratio=1.0, tile=tile)))
        cfgs = [RenderConfig(scale=s, ratio=r, tile=tile) for r in ratios]
        best = [float("inf")] * len(cfgs)
        imgs = [None] * len(cfgs)
        for _ in range(max(repeats, 1)):
            for j, cfg in enumerate(cfgs):
                imgs[j], secs = time_render(cloud, cfg, 1)
                best[j] = min(best[j], secs)
        for cfg, img, secs in zip(cfgs, imgs, best):
            rows.append({
                "scale": float(s),
                "ratio": float(cfg.ratio),
                "time_ms": secs * 1e3,
                "pairs": pair_count(cloud, cfg),
                "psnr_vs_r1": psnr(rgb_to_y(img), ref_y),
            })
    return rows


def format_rows(rows: list[dict]) -> str:
    out = [f"{'scale':>6} {'ratio':>6} {'time_ms':>10} {'pairs':>12} {'psnr_vs_r1':>11}"]
    for r in rows:
        out.append(f"{r['scale']:>6g} {r['ratio']:>6g} {r['time_ms']:>10.2f} "
                   f"{r['pairs']:>12d} {r['psnr_vs_r1']:>11.3f}")
    out.append("")
    for r in rows:
        out.append(" ".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}"
                            for k, v in r.items()))
    return "\n".join(out)


def parse_rows(text: str) -> list[dict]:
    """Parse the key=value lines emitted by :func:`format_rows`."""
    rows = []
    for line in text.splitlines():
        if "=" not in line:
            continue
        row = {}
        for tok in line.split():
            k, v = tok.split("=", 1)
            row[k] = int(v) if k == "pairs" else float(v)
        rows.append(row)
    return rows
