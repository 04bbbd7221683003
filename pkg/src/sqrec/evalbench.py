"""Accuracy and runtime comparison of recovery methods.

Produces per-parameter mean absolute error, signed-error histograms, and
wall-clock timing stats, and writes them as a human-readable table, a
machine-readable CSV, and two-column plot-data files.  Published full-scale
reference numbers are kept here as context constants for the text report.
"""

from __future__ import annotations

import csv
import io
import os
import platform
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import PARAM_NAMES

HIST_BINS = 64
HIST_SPAN_SIGMAS = 4.0

# Published full-scale (256x256) results, for context rows in
# the text report: per-parameter MAE plus per-image runtime.
PUBLISHED_REFERENCE = {
    "cnn (published, full scale)": {
        "a1": 1.014, "a2": 1.024, "a3": 0.965,
        "eps1": 0.015, "eps2": 0.018,
        "x0": 0.703, "y0": 0.859, "z0": 1.834,
        "time_s": 3.6e-3,
    },
    "iterative (published, full scale)": {
        "a1": 7.958, "a2": 7.461, "a3": 12.315,
        "eps1": 0.155, "eps2": 0.279,
        "x0": 0.744, "y0": 0.745, "z0": 1.888,
        "time_s": 988.9e-3,
    },
}

# Published signed-error standard deviations for the center coordinates
# (full-scale CNN), kept for context alongside histogram outputs.
PUBLISHED_ERROR_STD = {"x0": 0.85, "y0": 0.97, "z0": 1.92}


def mae(truths: np.ndarray, preds: np.ndarray) -> np.ndarray:
    """Per-parameter mean absolute error over (N,8) rows, raw units."""
    truths = np.atleast_2d(np.asarray(truths, dtype=np.float64))
    preds = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    if truths.shape != preds.shape:
        raise ValueError(f"shape mismatch {truths.shape} vs {preds.shape}")
    if truths.shape[0] == 0 or truths.shape[1] != 8:
        raise ValueError(f"expected non-empty (N,8) arrays, got {truths.shape}")
    return np.mean(np.abs(preds - truths), axis=0)


@dataclass
class ParamErrorStats:
    """Signed-error summary for one parameter: moments plus a histogram.

    Bins span mean +- span_sigmas * std; values outside are clipped into
    the first or last bin, so counts always sum to the sample count.
    """

    mae: float
    mean: float
    std: float
    lo: float
    hi: float
    counts: np.ndarray

    @property
    def bin_edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, len(self.counts) + 1)

    @property
    def bin_centers(self) -> np.ndarray:
        edges = self.bin_edges
        return 0.5 * (edges[:-1] + edges[1:])

    def equals(self, other: "ParamErrorStats") -> bool:
        return (self.mae == other.mae and self.mean == other.mean
                and self.std == other.std and self.lo == other.lo
                and self.hi == other.hi
                and np.array_equal(self.counts, other.counts))


def error_distribution(truths: np.ndarray, preds: np.ndarray,
                       bins: int = HIST_BINS,
                       span_sigmas: float = HIST_SPAN_SIGMAS) -> dict:
    """Per-parameter ParamErrorStats keyed by canonical parameter name."""
    truths = np.atleast_2d(np.asarray(truths, dtype=np.float64))
    preds = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    if truths.shape != preds.shape or truths.shape[1] != 8:
        raise ValueError(f"expected matching (N,8) arrays, got {truths.shape} "
                         f"and {preds.shape}")
    if truths.shape[0] == 0:
        raise ValueError("no samples")
    if bins < 2:
        raise ValueError("need at least two bins")
    errs = preds - truths
    out = {}
    for k, name in enumerate(PARAM_NAMES):
        col = errs[:, k]
        mean = float(col.mean())
        std = float(col.std())
        half = span_sigmas * std if std > 0 else 1e-9
        lo, hi = mean - half, mean + half
        counts, _ = np.histogram(np.clip(col, lo, hi), bins=bins, range=(lo, hi))
        out[name] = ParamErrorStats(float(np.abs(col).mean()), mean, std,
                                    lo, hi, counts.astype(np.int64))
    return out


@dataclass
class TimingStats:
    mean_s: float
    median_s: float
    std_s: float
    n_images: int
    repetitions: int
    failures: int
    environment: str

    def equals(self, other: "TimingStats") -> bool:
        return self == other


def environment_descriptor() -> str:
    return (f"{platform.platform()}; python {platform.python_version()}; "
            f"numpy {np.__version__}; cpus {os.cpu_count()}")


def benchmark(fn, inputs, repetitions: int = 1, warmup: int = 1) -> TimingStats:
    """Per-input wall time of ``fn``, warmup runs excluded from the stats.

    Inputs whose call raises are excluded and counted as failures.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    per_input = []
    failures = 0
    for item in inputs:
        try:
            for _ in range(warmup):
                fn(item)
            reps = []
            for _ in range(repetitions):
                t0 = time.perf_counter()
                fn(item)
                reps.append(time.perf_counter() - t0)
            per_input.append(statistics.fmean(reps))
        except Exception:
            failures += 1
    if not per_input:
        raise ValueError(f"no successful runs ({failures} failures)")
    return TimingStats(
        mean_s=statistics.fmean(per_input),
        median_s=statistics.median(per_input),
        std_s=statistics.pstdev(per_input),
        n_images=len(per_input),
        repetitions=repetitions,
        failures=failures,
        environment=environment_descriptor(),
    )


@dataclass
class MethodReport:
    n_samples: int
    errors: dict                     # param name -> ParamErrorStats
    timing: TimingStats = None

    def mae_vector(self) -> np.ndarray:
        return np.array([self.errors[n].mae for n in PARAM_NAMES])

    def equals(self, other: "MethodReport") -> bool:
        if self.n_samples != other.n_samples:
            return False
        if set(self.errors) != set(other.errors):
            return False
        if not all(self.errors[k].equals(other.errors[k]) for k in self.errors):
            return False
        if (self.timing is None) != (other.timing is None):
            return False
        return self.timing is None or self.timing.equals(other.timing)


@dataclass
class EvalReport:
    bins: int = HIST_BINS
    span_sigmas: float = HIST_SPAN_SIGMAS
    methods: dict = field(default_factory=dict)  # method name -> MethodReport

    def equals(self, other: "EvalReport") -> bool:
        return (self.bins == other.bins and self.span_sigmas == other.span_sigmas
                and set(self.methods) == set(other.methods)
                and all(self.methods[k].equals(other.methods[k])
                        for k in self.methods))


def evaluate_method(truths: np.ndarray, preds: np.ndarray,
                    timing: TimingStats = None, bins: int = HIST_BINS,
                    span_sigmas: float = HIST_SPAN_SIGMAS) -> MethodReport:
    truths = np.atleast_2d(np.asarray(truths, dtype=np.float64))
    return MethodReport(truths.shape[0],
                        error_distribution(truths, preds, bins, span_sigmas),
                        timing)


def format_text_table(report: EvalReport, include_reference: bool = True) -> str:
    cols = list(PARAM_NAMES) + ["time/img [s]"]
    rows = []
    for method, m in report.methods.items():
        vals = [f"{m.errors[n].mae:.4f}" for n in PARAM_NAMES]
        vals.append(f"{m.timing.mean_s:.4g}" if m.timing else "-")
        rows.append((method, vals))
    if include_reference:
        for method, ref in PUBLISHED_REFERENCE.items():
            vals = [f"{ref[n]:.4f}" for n in PARAM_NAMES]
            vals.append(f"{ref['time_s']:.4g}")
            rows.append((method, vals))
    name_w = max(len("method"), *(len(r[0]) for r in rows)) if rows else len("method")
    col_w = [max(len(c), 8) for c in cols]
    lines = ["Per-parameter mean absolute error (raw units)", ""]
    header = "method".ljust(name_w) + "  " + "  ".join(
        c.rjust(w) for c, w in zip(cols, col_w))
    lines.append(header)
    lines.append("-" * len(header))
    for method, vals in rows:
        lines.append(method.ljust(name_w) + "  " + "  ".join(
            v.rjust(w) for v, w in zip(vals, col_w)))
    return "\n".join(lines) + "\n"


def _timing_fields(t: TimingStats):
    return [("mean_s", repr(t.mean_s)), ("median_s", repr(t.median_s)),
            ("std_s", repr(t.std_s)), ("n_images", str(t.n_images)),
            ("repetitions", str(t.repetitions)), ("failures", str(t.failures)),
            ("environment", t.environment)]


def report_to_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "method", "parameter", "key", "value"])
    w.writerow(["meta", "", "", "bins", str(report.bins)])
    w.writerow(["meta", "", "", "span_sigmas", repr(report.span_sigmas)])
    for method, m in report.methods.items():
        w.writerow(["samples", method, "", "", str(m.n_samples)])
        for name in PARAM_NAMES:
            s = m.errors[name]
            w.writerow(["mae", method, name, "", repr(s.mae)])
            w.writerow(["errmean", method, name, "", repr(s.mean)])
            w.writerow(["errstd", method, name, "", repr(s.std)])
            w.writerow(["histlo", method, name, "", repr(s.lo)])
            w.writerow(["histhi", method, name, "", repr(s.hi)])
            for i, c in enumerate(s.counts):
                w.writerow(["hist", method, name, str(i), str(int(c))])
        if m.timing is not None:
            for key, value in _timing_fields(m.timing):
                w.writerow(["timing", method, "", key, value])
    return buf.getvalue()


def report_from_csv(text: str) -> EvalReport:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["kind", "method", "parameter", "key", "value"]:
        raise ValueError("not a recovery-report CSV")
    report = EvalReport()
    raw = {}      # method -> param -> field dict
    timing = {}   # method -> field dict
    samples = {}
    for kind, method, param, key, value in rows[1:]:
        if kind == "meta":
            if key == "bins":
                report.bins = int(value)
            elif key == "span_sigmas":
                report.span_sigmas = float(value)
        elif kind == "samples":
            samples[method] = int(value)
        elif kind == "timing":
            timing.setdefault(method, {})[key] = value
        else:
            entry = raw.setdefault(method, {}).setdefault(
                param, {"counts": np.zeros(0, dtype=np.int64)})
            if kind == "hist":
                i = int(key)
                if entry["counts"].size <= i:
                    grown = np.zeros(i + 1, dtype=np.int64)
                    grown[: entry["counts"].size] = entry["counts"]
                    entry["counts"] = grown
                entry["counts"][i] = int(value)
            else:
                entry[kind] = float(value)
    for method, params in raw.items():
        errors = {}
        for name, e in params.items():
            errors[name] = ParamErrorStats(e["mae"], e["errmean"], e["errstd"],
                                           e["histlo"], e["histhi"], e["counts"])
        t = None
        if method in timing:
            f = timing[method]
            t = TimingStats(float(f["mean_s"]), float(f["median_s"]),
                            float(f["std_s"]), int(f["n_images"]),
                            int(f["repetitions"]), int(f["failures"]),
                            f["environment"])
        report.methods[method] = MethodReport(samples[method], errors, t)
    return report


def write_plot_data(report: EvalReport, out_dir) -> list:
    """One two-column file (bin center, count) per method and parameter."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for method, m in report.methods.items():
        tag = "".join(c if c.isalnum() else "_" for c in method)
        for name in PARAM_NAMES:
            s = m.errors[name]
            lines = [f"{repr(float(c))}\t{int(n)}" for c, n in zip(s.bin_centers, s.counts)]
            path = out_dir / f"{tag}_{name}.tsv"
            path.write_text("\n".join(lines) + "\n", encoding="ascii")
            paths.append(path)
    return paths


def emit_report(report: EvalReport, out_dir) -> dict:
    """Write text, CSV, and plot-data renderings; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text_path = out_dir / "report.txt"
    csv_path = out_dir / "report.csv"
    text_path.write_text(format_text_table(report), encoding="ascii")
    csv_path.write_text(report_to_csv(report), encoding="ascii")
    plots = write_plot_data(report, out_dir / "plot-data")
    return {"text": text_path, "csv": csv_path, "plot_data": plots}
