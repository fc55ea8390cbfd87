"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data/format error,
3 numeric failure (non-finite loss, failed gradient check).
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 1, 2, 3
PRESETS = ("overfit", "outdoor")


def _set_threads(n):
    # Must run before numpy loads its BLAS; the CLI imports numpy lazily for this reason.
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def _load_cfg(args):
    from .config import OUTDOOR, OVERFIT, ModelConfig, parse_config

    base = ModelConfig()
    for name in args.preset or ():
        base = base.replace(**{"overfit": OVERFIT, "outdoor": OUTDOOR}[name])
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = parse_config(fh.read(), base)
    if args.seed is not None:
        base = base.replace(seed=args.seed)
    return base


def _out_dir(args, default):
    path = args.out or default
    os.makedirs(path, exist_ok=True)
    return path


def cmd_train(args):
    from .checkpoint import load_checkpoint
    from .config import format_config
    from .report import plot_training
    from .train import train

    resume = load_checkpoint(args.resume) if args.resume else None
    cfg = resume.config if resume else _load_cfg(args)
    out = _out_dir(args, "run")
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))

    def log(rec):
        print(rec.to_csv_row(), flush=True)

    result = train(cfg, out_dir=out, resume=resume, log=log if not args.quiet else None,
                   checkpoint_every=args.checkpoint_every)
    if result.epochs:
        plot_training(result.epochs, os.path.join(out, "loss.png"))
    print(f"step={result.step}")
    print(f"checkpoint={os.path.join(out, 'model.ckpt')}")
    return EXIT_OK


def cmd_infer(args):
    from .checkpoint import load_checkpoint, restore_model
    from .data import load_ppm, save_pfm, save_pgm
    from .errors import ConfigError
    from .train import predict

    ckpt = load_checkpoint(args.checkpoint)
    model = restore_model(ckpt)
    rgb = load_ppm(args.image)
    _, h, w = rgb.shape
    if h % 32 or w % 32:
        raise ConfigError(f"image {w}x{h} does not fit the model: sides must be multiples of 32")
    depth = predict(model, rgb[None])[0, 0]
    save_pfm(args.output, depth)
    gray_path = os.path.splitext(args.output)[0] + ".pgm"
    save_pgm(gray_path, depth / model.cfg.max_depth)
    print(f"depth={args.output}")
    print(f"preview={gray_path}")
    return EXIT_OK


def cmd_eval(args):
    import numpy as np

    from .checkpoint import load_checkpoint, restore_model
    from .data import read_manifest, render_all
    from .losses import MetricReport, eval_metrics
    from .report import plot_depth
    from .train import eval_specs, predict

    if args.oracle:
        cfg = _load_cfg(args)
        model = None
        if args.checkpoint and not args.manifest:
            args.manifest = args.checkpoint  # no checkpoint in oracle mode; the one positional is the manifest
    else:
        if not args.checkpoint:
            raise _Usage("eval needs a checkpoint unless --oracle is given")
        model = restore_model(load_checkpoint(args.checkpoint))
        cfg = model.cfg
    specs = read_manifest(args.manifest) if args.manifest else eval_specs(cfg)
    samples = render_all(specs)
    gt = np.stack([s.depth for s in samples])
    mask = np.stack([s.mask for s in samples])
    if model is None:
        pred = gt.copy()  # oracle path: the prediction is the ground truth
    else:
        pred = predict(model, np.stack([s.rgb for s in samples]), cfg.batch_size)
    report = eval_metrics(pred, gt, mask, caps=(cfg.min_depth, cfg.max_depth))
    out = _out_dir(args, "eval")
    with open(os.path.join(out, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write(MetricReport.CSV_HEADER + "\n" + report.to_csv_row() + "\n")
    with open(os.path.join(out, "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    plot_depth(samples[0].rgb, pred[0], gt[0], os.path.join(out, "depth.png"), cfg.max_depth)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradsuite import format_table, run_suite

    results = run_suite(seed=args.seed or 0, names=args.only or None)
    table = format_table(results)
    sys.stdout.write(table)
    if args.out:
        with open(os.path.join(_out_dir(args, "."), "gradcheck.csv"), "w", encoding="utf-8") as fh:
            fh.write(table)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed: {' '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_bench(args):
    from .bench import format_table, run_bench
    from .report import plot_bench

    cfg = _load_cfg(args)
    rows = run_bench(cfg, tuple(args.sizes))
    table = format_table(rows)
    sys.stdout.write(table)
    out = _out_dir(args, "bench")
    with open(os.path.join(out, "bench.csv"), "w", encoding="utf-8") as fh:
        fh.write(table)
    plot_bench(rows, os.path.join(out, "bench.png"))
    return EXIT_OK


def cmd_gen_data(args):
    from .data import render_all, save_pfm, save_ppm, specs_from_config, write_manifest

    cfg = _load_cfg(args)
    specs = specs_from_config(cfg, count=args.count, size=args.size)
    out = _out_dir(args, "data")
    write_manifest(os.path.join(out, "manifest.txt"), specs)
    for i, sample in enumerate(render_all(specs)):
        save_ppm(os.path.join(out, f"scene{i:04d}.ppm"), sample.rgb)
        save_pfm(os.path.join(out, f"scene{i:04d}.pfm"), sample.depth)
    print(f"manifest={os.path.join(out, 'manifest.txt')}")
    print(f"samples={len(specs)}")
    return EXIT_OK


class _Usage(Exception):
    pass


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--preset", action="append", choices=PRESETS, help="apply a named preset before --config")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the model seed")
    common.add_argument("--device-threads", type=int, default=0, help="BLAS thread count (0 = library default)")

    p = argparse.ArgumentParser(prog="depthcrf", description="Monocular depth with window CRF decoding.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train and write a checkpoint plus CSV log")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--checkpoint-every", type=int, default=0, help="also save every N steps")
    t.add_argument("--quiet", action="store_true", help="do not echo epoch rows")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", parents=[common], help="predict depth for one PPM image")
    i.add_argument("checkpoint")
    i.add_argument("image")
    i.add_argument("output", help="output .pfm path; a .pgm preview is written beside it")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a scene manifest")
    e.add_argument("checkpoint", nargs="?")
    e.add_argument("manifest", nargs="?", help="scene manifest (default: the config's held-out scenes)")
    e.add_argument("--oracle", action="store_true", help="use ground truth as the prediction")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    g.add_argument("--only", nargs="*", help="restrict to these registry names")
    g.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench", parents=[common], help="attention MAC counts across resolutions")
    b.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("gen-data", parents=[common], help="render synthetic scenes to PPM/PFM files")
    d.add_argument("--count", type=int)
    d.add_argument("--size", type=int)
    d.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    _set_threads(args.device_threads)

    # DEPTHCRF_VERIFY=1 is read by the tensor core and selects 64-bit mode.
    from .errors import ConfigError, DimensionError, EvaluationError, FormatError, NumericError

    try:
        return args.func(args)
    except (_Usage, ConfigError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, EvaluationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
