"""Command-line pipeline driver.

Subcommands cover the full workflow: render a single shape, generate a
dataset, train the regressor, fit one image iteratively, evaluate both
methods on a test split, and benchmark per-image runtime.  Every run writes
a ``run_config.json`` snapshot of its resolved options next to its outputs.
Exit codes: 0 success, 1 user error, 2 internal error.

Heavy imports happen inside the command functions so the global
``--threads`` flag can pin BLAS/OpenMP thread counts via environment
variables before any numerical library loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

PRESET_DATASET_DEFAULTS = {
    "desk": {"image_size": 64, "count": 3000},
    "paper": {"image_size": 256, "count": 120000},
}
SPLIT_FRACTIONS = (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0)  # train/val/test
FIT_REPORT_FIELDS = ("a1", "a2", "a3", "eps1", "eps2", "x0", "y0", "z0",
                     "residual", "iterations", "converged", "wall_s")


class UserError(Exception):
    """Bad invocation or unusable input; reported without a traceback."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(message)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _float_list(text: str):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats: {exc}")


def _int_list(text: str):
    try:
        return tuple(int(v) for v in text.split(",")) if text else ()
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {exc}")


def _write_snapshot(args, out_dir: Path):
    payload = {k: v for k, v in vars(args).items() if k != "func"}
    for k, v in payload.items():
        if isinstance(v, Path):
            payload[k] = str(v)
        elif isinstance(v, tuple):
            payload[k] = list(v)
    from . import __version__

    payload["tool_version"] = __version__
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="ascii")


def _params_from_csv(text: str):
    from .geometry import SuperquadricParams

    vals = _float_list(text)
    if len(vals) != 8:
        raise UserError(f"--params needs 8 comma-separated values "
                        f"(a1,a2,a3,eps1,eps2,x0,y0,z0), got {len(vals)}")
    try:
        return SuperquadricParams.from_array(vals)
    except ValueError as exc:
        raise UserError(str(exc))


def _load_manifest(path) -> "object":
    from .dataset import DatasetError, load_manifest

    try:
        return load_manifest(Path(path))
    except (DatasetError, FileNotFoundError) as exc:
        raise UserError(str(exc))


def _arch_for_manifest(manifest, preset: str):
    from .regressor import PRESETS

    if preset == "auto":
        size = (manifest.render_config.height, manifest.render_config.width)
        for name, factory in PRESETS.items():
            if tuple(factory().input_hw) == size:
                return factory()
        raise UserError(f"no preset matches {size[1]}x{size[0]} images; "
                        f"pass --preset explicitly")
    return PRESETS[preset]()


def cmd_render(args) -> int:
    from .rendering import RenderConfig, render_range_image, write_pgm, write_range_image

    params = _params_from_csv(args.params)
    try:
        cfg = RenderConfig(width=args.size, height=args.size,
                           surface_tol=args.surface_tol, step=args.step)
    except ValueError as exc:
        raise UserError(str(exc))
    img = render_range_image(params, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_range_image(img, out)
    if args.pgm:
        write_pgm(img, Path(args.pgm))
    _write_snapshot(args, out.parent)
    print(f"wrote {out} ({img.nonzero_count()} foreground pixels)")
    return 0


def cmd_gen_dataset(args) -> int:
    from .dataset import (SamplingRanges, dataset_digest, generate_dataset,
                          save_manifest, split_dataset, validate_fractions)
    from .rendering import RenderConfig

    defaults = PRESET_DATASET_DEFAULTS[args.preset]
    count = args.count if args.count is not None else defaults["count"]
    size = defaults["image_size"]
    cfg = RenderConfig(width=size, height=size)
    out = Path(args.out)
    if (out / "manifest.tsv").exists() and not args.force:
        raise UserError(f"{out} already holds a dataset; pass --force to regenerate")
    try:
        fractions = validate_fractions(
            args.fractions if args.fractions is not None else SPLIT_FRACTIONS)
    except ValueError as exc:
        raise UserError(str(exc))
    manifest = generate_dataset(count, args.seed, SamplingRanges(), cfg, out)
    manifest = split_dataset(manifest, fractions, args.seed)
    save_manifest(manifest)
    _write_snapshot(args, out)
    print(f"wrote {count} images to {out}")
    print(f"splits: " + ", ".join(f"{s}={len(manifest.split_indices(s))}"
                                  for s in manifest.splits()))
    print(f"digest: {dataset_digest(manifest)}")
    return 0


def cmd_train(args) -> int:
    from .dataset import load_split_arrays
    from .net.weights import write_weights
    from .regressor import (TrainConfig, TrainData, build_model,
                            prepare_inputs, scale_targets, train)

    manifest = _load_manifest(args.data)
    arch = _arch_for_manifest(manifest, args.preset)
    if (manifest.render_config.height, manifest.render_config.width) != tuple(arch.input_hw):
        raise UserError(f"dataset images are {manifest.render_config.width}x"
                        f"{manifest.render_config.height} but architecture "
                        f"{arch.name!r} expects {arch.input_hw[1]}x{arch.input_hw[0]}")
    xt, yt = load_split_arrays(manifest, args.train_split)
    xv, yv = load_split_arrays(manifest, args.val_split)
    data = TrainData(prepare_inputs(xt), scale_targets(yt),
                     prepare_inputs(xv), scale_targets(yv))
    try:
        cfg = TrainConfig(batch_size=args.batch_size, lr=args.lr,
                          lr_drop_epochs=args.lr_drops, max_epochs=args.max_epochs,
                          patience=args.patience, seed=args.seed,
                          target_train_loss=args.target_train_loss)
    except ValueError as exc:
        raise UserError(str(exc))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_snapshot(args, out)
    weights = build_model(arch, seed=args.seed)
    weights, log = train(arch, weights, data, cfg,
                         checkpoint_path=out / "weights.sqwt")
    write_weights(weights, out / "weights.sqwt")
    (out / "trainlog.tsv").write_text(log.to_tsv(), encoding="ascii")
    print(f"trained {len(log.epochs)} epochs ({log.stopped_on}); "
          f"best epoch {log.best_epoch}, val loss {log.best_val_loss:.6g}")
    print(f"wrote {out / 'weights.sqwt'}")
    return 0


def cmd_fit(args) -> int:
    from .fitter import FitConfig, FitError, fit_range_image
    from .rendering import FormatError, RenderConfig, read_range_image

    path = Path(args.image)
    if not path.exists():
        raise UserError(f"no such image file: {path}")
    try:
        img = read_range_image(path)
    except FormatError as exc:
        raise UserError(str(exc))
    if args.data:
        render_cfg = _load_manifest(args.data).render_config
    else:
        render_cfg = RenderConfig(width=img.width, height=img.height)
    init = _params_from_csv(args.init) if args.init else None
    cfg = FitConfig(max_iters=args.max_iters)
    try:
        result = fit_range_image(img, render_cfg, cfg, init=init)
    except FitError as exc:
        raise UserError(str(exc))
    values = {k: float(v) for k, v in zip(FIT_REPORT_FIELDS[:8],
                                          result.params.as_array())}
    values.update(residual=result.residual, iterations=result.iterations,
                  converged=result.converged, wall_s=result.wall_s)
    lines = [f"{name}\t{values[name]!r}" for name in FIT_REPORT_FIELDS]
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="ascii")
        _write_snapshot(args, out.parent)
    sys.stdout.write(text)
    return 0


def _scaled_pair(truths, preds):
    from .regressor import scale_targets

    return scale_targets(truths).astype(float), scale_targets(preds).astype(float)


def cmd_eval(args) -> int:
    import numpy as np

    from .evalbench import EvalReport, benchmark, emit_report, evaluate_method
    from .fitter import FitConfig, fit_range_image
    from .net.weights import read_weights
    from .regressor import (predict_params, prepare_inputs, restore_network)
    from .rendering import RangeImage

    from .dataset import DatasetError, load_split_arrays
    from .rendering import FormatError

    manifest = _load_manifest(args.data)
    arch = _arch_for_manifest(manifest, args.preset)
    try:
        weights = read_weights(Path(args.weights), expected_digest=arch.digest())
    except (FormatError, FileNotFoundError) as exc:
        raise UserError(str(exc))
    try:
        depths, truths = load_split_arrays(manifest, args.split)
    except DatasetError as exc:
        raise UserError(str(exc))
    if args.limit is not None:
        depths, truths = depths[: args.limit], truths[: args.limit]
    n = len(depths)
    if n == 0:
        raise UserError(f"split {args.split!r} has no records after --limit")

    net = restore_network(arch, weights)
    learned = np.array([p.as_array() for p in predict_params(net, depths)])

    cfg = manifest.render_config
    fit_cfg = FitConfig()
    n_fit = min(n, args.iterative_limit) if args.iterative_limit else n
    iterative, it_truths = [], []
    for i in range(n_fit):
        img = RangeImage(cfg.width, cfg.height, depths[i])
        try:
            iterative.append(fit_range_image(img, cfg, fit_cfg).params.as_array())
            it_truths.append(truths[i])
        except Exception:
            continue

    report = EvalReport()
    if args.scaled:
        report.methods["learned (scaled)"] = evaluate_method(
            *_scaled_pair(truths, learned))
        if iterative:
            report.methods["iterative (scaled)"] = evaluate_method(
                *_scaled_pair(np.array(it_truths), np.array(iterative)))
    else:
        timing_learned = benchmark(
            lambda d: predict_params(net, d), depths[: min(n, args.timing_images)],
            repetitions=args.repetitions)
        report.methods["learned"] = evaluate_method(truths, learned, timing_learned)
        if iterative:
            timing_iter = benchmark(
                lambda d: fit_range_image(RangeImage(cfg.width, cfg.height, d),
                                          cfg, fit_cfg),
                depths[: min(n_fit, args.timing_images)],
                repetitions=args.repetitions)
            report.methods["iterative"] = evaluate_method(
                np.array(it_truths), np.array(iterative), timing_iter)

    out = Path(args.out)
    paths = emit_report(report, out)
    _write_snapshot(args, out)
    print((out / "report.txt").read_text(), end="")
    print(f"wrote {paths['csv']} and {len(paths['plot_data'])} plot-data files")
    return 0


def cmd_bench(args) -> int:
    from .dataset import load_split_arrays
    from .evalbench import benchmark
    from .fitter import FitConfig, fit_range_image
    from .net.weights import read_weights
    from .regressor import predict_params, restore_network
    from .rendering import RangeImage

    manifest = _load_manifest(args.data)
    depths, _ = load_split_arrays(manifest, args.split)
    if args.limit is not None:
        depths = depths[: args.limit]
    if len(depths) == 0:
        raise UserError("no images to benchmark")
    cfg = manifest.render_config
    if args.method == "learned":
        if not args.weights:
            raise UserError("--weights is required for the learned method")
        arch = _arch_for_manifest(manifest, args.preset)
        try:
            weights = read_weights(Path(args.weights), expected_digest=arch.digest())
        except (FileNotFoundError, ValueError) as exc:
            raise UserError(str(exc))
        net = restore_network(arch, weights)
        fn = lambda d: predict_params(net, d)
    else:
        fit_cfg = FitConfig()
        fn = lambda d: fit_range_image(RangeImage(cfg.width, cfg.height, d),
                                       cfg, fit_cfg)
    stats = benchmark(fn, depths, repetitions=args.repetitions)
    for key in ("mean_s", "median_s", "std_s", "n_images", "repetitions",
                "failures", "environment"):
        print(f"{key}\t{getattr(stats, key)}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.txt").write_text(
            "".join(f"{k}\t{getattr(stats, k)}\n" for k in
                    ("mean_s", "median_s", "std_s", "n_images", "repetitions",
                     "failures", "environment")), encoding="ascii")
        _write_snapshot(args, out)
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="sqrec",
                     description="Superquadric recovery from range images")
    parser.add_argument("--threads", type=_positive_int, default=None,
                        help="pin BLAS/OpenMP thread count (set before numpy loads)")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("render", help="render one shape to a range-image file")
    p.add_argument("--params", required=True,
                   help="a1,a2,a3,eps1,eps2,x0,y0,z0")
    p.add_argument("--out", required=True, help="output .sqri path")
    p.add_argument("--pgm", default=None, help="optional 16-bit PGM preview path")
    p.add_argument("--size", type=_positive_int, default=256)
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--surface-tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("gen-dataset", help="generate a seeded synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--count", type=_positive_int, default=None,
                   help="records to generate (preset default otherwise)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fractions", type=_float_list, default=None,
                   help="train,val,test fractions (default 2/3,1/6,1/6)")
    p.add_argument("--force", action="store_true",
                   help="overwrite an existing dataset directory")
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", help="train the CNN regressor on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=("auto", "desk", "paper"), default="auto")
    p.add_argument("--train-split", default="train")
    p.add_argument("--val-split", default="val")
    p.add_argument("--batch-size", type=_positive_int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-drops", type=_int_list, default=(250, 500),
                   help="epochs after which lr divides by 10")
    p.add_argument("--max-epochs", type=_positive_int, default=600)
    p.add_argument("--patience", type=_positive_int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-train-loss", type=float, default=None,
                   help="stop once training loss reaches this value")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit", help="fit one range image iteratively")
    p.add_argument("--image", required=True)
    p.add_argument("--data", default=None,
                   help="dataset dir supplying the projection geometry")
    p.add_argument("--out", default=None, help="optional output record path")
    p.add_argument("--init", default=None,
                   help="optional starting parameters a1,...,z0")
    p.add_argument("--max-iters", type=_positive_int, default=200)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="evaluate learned and iterative recovery")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=("auto", "desk", "paper"), default="auto")
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=_positive_int, default=None,
                   help="evaluate at most this many images")
    p.add_argument("--iterative-limit", type=_positive_int, default=None,
                   help="cap on (slow) iterative fits")
    p.add_argument("--timing-images", type=_positive_int, default=20)
    p.add_argument("--repetitions", type=_positive_int, default=1)
    p.add_argument("--scaled", action="store_true",
                   help="report errors in scaled [0,1] units instead of raw")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time one method over dataset images")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("learned", "iterative"), required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--preset", choices=("auto", "desk", "paper"), default="auto")
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=_positive_int, default=20)
    p.add_argument("--repetitions", type=_positive_int, default=3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def _apply_threads(argv) -> None:
    """Set thread env vars before numpy import; no-op if numpy is loaded."""
    if "--threads" not in argv:
        return
    idx = argv.index("--threads")
    if idx + 1 >= len(argv):
        return
    value = argv[idx + 1]
    if not value.isdigit():
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, value)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_threads(argv)
    try:
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
