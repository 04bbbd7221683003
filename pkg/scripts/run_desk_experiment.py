"""End-to-end desk-scale experiment: dataset, training, evaluation, timing.

Generates a 64x64 dataset, trains the desk regressor, evaluates learned and
iterative recovery on the test split, and emits the comparison report.

Usage: python scripts/run_desk_experiment.py --out runs/desk [--count 3000]
"""

import argparse
import time
from pathlib import Path

import numpy as np

from sqrec.dataset import (SamplingRanges, generate_dataset, load_split_arrays,
                           save_manifest, split_dataset)
from sqrec.evalbench import (EvalReport, benchmark, emit_report,
                             evaluate_method, format_text_table)
from sqrec.fitter import FitConfig, fit_range_image
from sqrec.net.weights import write_weights
from sqrec.regressor import (TrainConfig, TrainData, build_model, desk_scale,
                             predict_params, prepare_inputs, restore_network,
                             scale_targets, train)
from sqrec.rendering import RangeImage, RenderConfig


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--count", type=int, default=3000)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--batch-size", type=int, default=4)
    ap.add_argument("--max-epochs", type=int, default=70)
    ap.add_argument("--lr-drops", type=int, nargs=2, default=(42, 58))
    ap.add_argument("--patience", type=int, default=200)
    ap.add_argument("--timing-images", type=int, default=20)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = RenderConfig(width=64, height=64)

    t0 = time.perf_counter()
    manifest = generate_dataset(args.count, args.seed, SamplingRanges(), cfg,
                                out / "dataset")
    manifest = split_dataset(manifest, (2 / 3, 1 / 6, 1 / 6), args.seed)
    save_manifest(manifest)
    print(f"dataset: {args.count} images in {time.perf_counter() - t0:.0f}s")

    xt, yt = load_split_arrays(manifest, "train")
    xv, yv = load_split_arrays(manifest, "val")
    xs, ys = load_split_arrays(manifest, "test")
    data = TrainData(prepare_inputs(xt), scale_targets(yt),
                     prepare_inputs(xv), scale_targets(yv))
    arch = desk_scale()
    train_cfg = TrainConfig(batch_size=args.batch_size,
                            lr_drop_epochs=tuple(args.lr_drops),
                            max_epochs=args.max_epochs,
                            patience=args.patience, seed=args.seed)
    t0 = time.perf_counter()
    weights, log = train(arch, build_model(arch, seed=args.seed), data,
                         train_cfg, checkpoint_path=out / "weights.sqwt")
    write_weights(weights, out / "weights.sqwt")
    (out / "trainlog.tsv").write_text(log.to_tsv(), encoding="ascii")
    print(f"training: {len(log.epochs)} epochs ({log.stopped_on}), best "
          f"{log.best_epoch}, {(time.perf_counter() - t0) / 60:.1f} min")

    net = restore_network(arch, weights)
    preds = np.array([p.as_array() for p in predict_params(net, xs)])
    sample = xs[: args.timing_images]
    learned_t = benchmark(lambda d: predict_params(net, d), sample)
    iter_t = benchmark(lambda d: fit_range_image(
        RangeImage(cfg.width, cfg.height, d), cfg, FitConfig()), sample)
    iter_preds, iter_truths = [], []
    for depth, truth in zip(sample, ys[: args.timing_images]):
        img = RangeImage(cfg.width, cfg.height, depth)
        iter_preds.append(fit_range_image(img, cfg, FitConfig()).params.as_array())
        iter_truths.append(truth)

    report = EvalReport()
    report.methods["learned"] = evaluate_method(ys, preds, learned_t)
    report.methods["iterative"] = evaluate_method(
        np.array(iter_truths), np.array(iter_preds), iter_t)
    emit_report(report, out / "report")
    print(format_text_table(report))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
