"""Command-line front end.

Exit codes: 0 success, 1 check failure, 2 bad input or config, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, msg, code=EXIT_INPUT):
        super().__init__(msg)
        self.code = code


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gs2d", description="2D Gaussian image clouds: fit, render, check.")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for rendering (fallback: $GS2D_THREADS)")
    sub = p.add_subparsers(dest="cmd", required=True)

    f = sub.add_parser("fit", help="fit a cloud to an image")
    src = f.add_mutually_exclusive_group(required=True)
    src.add_argument("--in", dest="inp", help="LR image, fitted at scale 1")
    src.add_argument("--hr", help="HR image; LR made by bicubic downscaling, fitted at --scale")
    f.add_argument("--scale", type=float, default=1.0)
    f.add_argument("--m", type=int, default=16, help="gaussians per LR pixel (perfect square)")
    f.add_argument("--steps", type=int, default=1000)
    f.add_argument("--lr", type=float, default=2e-3)
    f.add_argument("--milestones", type=_ints, default=[], help="comma list of steps halving lr")
    f.add_argument("--warmup", type=int, default=0)
    f.add_argument("--loss", choices=("l1", "l2"), default="l1")
    f.add_argument("--freeze-position", action="store_true")
    f.add_argument("--freeze-sigma", type=float, default=None, metavar="V")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--ratio", type=float, default=0.1)
    f.add_argument("--tile", type=int, default=16)
    f.add_argument("--out", required=True)

    r = sub.add_parser("render", help="render a cloud file to an image")
    r.add_argument("cloud")
    r.add_argument("--scale", type=float, default=1.0)
    r.add_argument("--ratio", type=float, default=0.1)
    r.add_argument("--tile", type=int, default=16)
    r.add_argument("--out", required=True)

    g = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    g.add_argument("--n", type=int, default=24, help="gaussians per random cloud")
    g.add_argument("--trials", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tile", type=int, default=16)

    b = sub.add_parser("bench", help="sweep rasterization ratios")
    b.add_argument("cloud")
    b.add_argument("--scales", type=_floats, default=[4.0])
    b.add_argument("--ratios", type=_floats, default=[0.01, 0.1, 0.4, 0.8, 1.0])
    b.add_argument("--tile", type=int, default=16)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--out", default=None, help="also write the key=value rows here")

    mt = sub.add_parser("metrics", help="Y-channel PSNR/SSIM and L1/L2 between two images")
    mt.add_argument("a")
    mt.add_argument("b")
    mt.add_argument("--crop-border", type=int, default=0)

    i = sub.add_parser("info", help="print a cloud file header")
    i.add_argument("cloud")
    return p


def _configure_threads(n):
    if n is None:
        env = os.environ.get("GS2D_THREADS")
        n = int(env) if env else None
    if n is None:
        return
    if n < 1:
        raise CliError("--threads must be >= 1")
    if "numba" not in sys.modules:
        os.environ.setdefault("NUMBA_NUM_THREADS", str(max(n, os.cpu_count() or 1)))
    from .raster import set_threads
    set_threads(n)


def _read_image(path):
    from .io import ImageFormatError, load_image
    try:
        return load_image(path)
    except (ImageFormatError, FileNotFoundError) as exc:
        raise CliError(str(exc)) from exc


def _read_cloud(path):
    from .io import CloudFormatError, load_cloud
    try:
        return load_cloud(path)
    except (CloudFormatError, FileNotFoundError) as exc:
        raise CliError(f"{path}: {exc}") from exc


def cmd_fit(args) -> int:
    from .core import ValidationError
    from .fit import FitConfig, FitDivergedError, fit, init_cloud
    from .io import save_cloud
    from .metrics import bicubic_resize
    from .raster import InvalidConfigError, RenderConfig

    try:
        cfg = FitConfig(density=args.m, steps=args.steps, lr=args.lr,
                        lr_milestones=tuple(args.milestones), loss=args.loss,
                        freeze_position=args.freeze_position, freeze_sigma=args.freeze_sigma,
                        seed=args.seed, train_scale=args.scale if args.hr else 1.0,
                        ratio=args.ratio, tile=args.tile, warmup=args.warmup)
        RenderConfig(cfg.train_scale, cfg.ratio, cfg.tile)
    except (ValidationError, InvalidConfigError) as exc:
        raise CliError(str(exc)) from exc
    if args.inp:
        target = _read_image(args.inp)
        lr_size = target.shape[:2]
        init = None
    else:
        hr = _read_image(args.hr)
        s = cfg.train_scale
        lr_size = (int(math.floor(hr.shape[0] / s)), int(math.floor(hr.shape[1] / s)))
        if min(lr_size) < 1:
            raise CliError("HR image too small for this scale")
        out_h, out_w = RenderConfig(s, cfg.ratio, cfg.tile).output_size(*lr_size)
        target = hr[:out_h, :out_w]
        lr_img = bicubic_resize(target, lr_size)
        init = init_cloud(lr_size, cfg, lr_img, scale=1.0)
    try:
        cloud, report = fit(target, lr_size, cfg, init=init)
    except FitDivergedError as exc:
        raise CliError(f"{exc}", EXIT_NUMERIC) from exc
    save_cloud(args.out, cloud)
    lines = [f"n={cloud.n}", f"lr_height={lr_size[0]}", f"lr_width={lr_size[1]}",
             f"fit_scale={cfg.train_scale:g}", *report.lines()]
    Path(str(args.out) + ".report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_render(args) -> int:
    from .io import ImageFormatError, save_image
    from .raster import InvalidConfigError, RenderConfig, render
    from .core import ValidationError

    cf = _read_cloud(args.cloud)
    try:
        cfg = RenderConfig(args.scale, args.ratio, args.tile)
        img = render(cf.params(), cfg)
    except (InvalidConfigError, ValidationError) as exc:
        raise CliError(str(exc)) from exc
    try:
        save_image(args.out, img)
    except ImageFormatError as exc:
        raise CliError(str(exc)) from exc
    print(f"wrote {args.out} ({img.shape[1]}x{img.shape[0]})")
    return EXIT_OK


GRADCHECK_SCALES = (1.0, 1.7, 2.0, 4.0)
GRADCHECK_RATIOS = (0.1, 1.0)


def cmd_gradcheck(args) -> int:
    import numpy as np

    from .core import grid_shape, random_cloud
    from .grad import finite_diff_check
    from .raster import RenderConfig

    if args.n < 0 or args.trials < 0:
        raise CliError("--n and --trials must be non-negative")
    if args.n == 0 or args.trials == 0:
        print("PASS (nothing to check)")
        return EXIT_OK
    rng = np.random.default_rng(args.seed)
    h, w = grid_shape(args.n)
    worst = None
    for trial in range(args.trials):
        cloud = random_cloud(rng, h, w, 1)
        r = GRADCHECK_RATIOS[trial % len(GRADCHECK_RATIOS)]
        s = GRADCHECK_SCALES[(trial // len(GRADCHECK_RATIOS)) % len(GRADCHECK_SCALES)]
        cfg = RenderConfig(s, r, args.tile)
        d_out = rng.uniform(-1.0, 1.0, (*cfg.output_size(h, w), 3))
        rep = finite_diff_check(cloud, cfg, d_output=d_out)
        status = "ok" if rep.passed else "FAIL"
        errs = " ".join(f"{k}={v:.2e}" for k, v in rep.max_rel_err.items())
        print(f"trial={trial} scale={s:g} ratio={r:g} {status} {errs}")
        if not rep.passed and (worst is None or max(rep.max_rel_err.values()) > worst[0]):
            worst = (max(rep.max_rel_err.values()), trial, rep.worst)
    if worst is not None:
        _, trial, (name, i, col, a, n) = worst
        print(f"FAIL worst offender: parameter={name} trial={trial} gaussian={i} column={col} "
              f"analytic={a:.6e} numeric={n:.6e}")
        return EXIT_CHECK
    print("PASS")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import format_rows, run_bench
    from .raster import InvalidConfigError

    cf = _read_cloud(args.cloud)
    try:
        rows = run_bench(cf.params(), args.scales, args.ratios, args.tile, args.repeats)
    except InvalidConfigError as exc:
        raise CliError(str(exc)) from exc
    text = format_rows(rows)
    print(text)
    if args.out:
        Path(args.out).write_text("\n".join(text.split("\n\n", 1)[-1:]) + "\n")
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .metrics import evaluate

    a = _read_image(args.a)
    b = _read_image(args.b)
    if a.shape != b.shape:
        raise CliError(f"size mismatch: {a.shape[1]}x{a.shape[0]} vs {b.shape[1]}x{b.shape[0]}")
    try:
        rep = evaluate(a, b, args.crop_border)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    print("\n".join(rep.lines()))
    return EXIT_OK


def cmd_info(args) -> int:
    cf = _read_cloud(args.cloud)
    print("\n".join(cf.header_lines()))
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "render": cmd_render, "gradcheck": cmd_gradcheck,
            "bench": cmd_bench, "metrics": cmd_metrics, "info": cmd_info}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        _configure_threads(args.threads)
        return COMMANDS[args.cmd](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
