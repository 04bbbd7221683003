"""Error metrics, histograms, timing harness, and report serialization."""

import itertools

import numpy as np
import pytest

from sqrec import evalbench
from sqrec.evalbench import (
    EvalReport,
    HIST_BINS,
    PUBLISHED_REFERENCE,
    PUBLISHED_ERROR_STD,
    ParamErrorStats,
    TimingStats,
    benchmark,
    emit_report,
    error_distribution,
    evaluate_method,
    format_text_table,
    mae,
    report_from_csv,
    report_to_csv,
    write_plot_data,
)
from sqrec.geometry import PARAM_NAMES


def synth_report(rng, with_timing=True, methods=("cnn", "iterative")):
    report = EvalReport()
    for i, name in enumerate(methods):
        truths = rng.uniform(0, 100, size=(40, 8))
        preds = truths + rng.normal(0, 1 + i, size=(40, 8))
        timing = None
        if with_timing:
            timing = TimingStats(0.01 * (i + 1), 0.009, 0.001, 40, 3, i, "test env")
        report.methods[name] = evaluate_method(truths, preds, timing)
    return report


class TestMae:
    def test_hand_case(self):
        t = np.zeros((2, 8))
        p = np.zeros((2, 8))
        p[0, 0] = 1.0
        p[1, 0] = -3.0
        p[0, 5] = 4.0
        out = mae(t, p)
        assert out[0] == 2.0
        assert out[5] == 2.0
        assert np.all(out[[1, 2, 3, 4, 6, 7]] == 0.0)

    def test_single_row(self):
        t = np.arange(8.0)
        p = np.arange(8.0) + 0.25
        np.testing.assert_allclose(mae(t, p), 0.25)

    def test_validation(self):
        with pytest.raises(ValueError, match="mismatch"):
            mae(np.zeros((2, 8)), np.zeros((3, 8)))
        with pytest.raises(ValueError, match="non-empty"):
            mae(np.zeros((0, 8)), np.zeros((0, 8)))
        with pytest.raises(ValueError):
            mae(np.zeros((2, 7)), np.zeros((2, 7)))


class TestErrorDistribution:
    def test_window_spans_four_sigmas(self, rng):
        t = rng.uniform(0, 10, size=(500, 8))
        errs = rng.normal(0, 2, size=(500, 8))
        stats = error_distribution(t, t + errs)
        for k, name in enumerate(PARAM_NAMES):
            s = stats[name]
            assert s.mean == pytest.approx(errs[:, k].mean())
            assert s.std == pytest.approx(errs[:, k].std())
            assert s.lo == pytest.approx(s.mean - 4.0 * s.std)
            assert s.hi == pytest.approx(s.mean + 4.0 * s.std)
            assert len(s.counts) == HIST_BINS

    def test_mass_conserved_with_outliers(self, rng):
        t = np.zeros((200, 8))
        errs = rng.normal(0, 1, size=(200, 8))
        errs[0, :] = 500.0
        errs[1, :] = -500.0
        stats = error_distribution(t, t + errs)
        for name in PARAM_NAMES:
            s = stats[name]
            assert s.counts.sum() == 200
            assert s.counts[0] >= 1 and s.counts[-1] >= 1

    def test_injected_gaussian_recovered(self):
        rng = np.random.default_rng(17)
        t = rng.uniform(0, 50, size=(5000, 8))
        errs = rng.normal(1.5, 2.0, size=(5000, 8))
        stats = error_distribution(t, t + errs)
        for name in PARAM_NAMES:
            assert stats[name].mean == pytest.approx(1.5, abs=0.1)
            assert stats[name].std == pytest.approx(2.0, rel=0.05)

    def test_zero_spread_collapses_to_middle_bin(self):
        t = np.zeros((10, 8))
        p = np.full((10, 8), 3.25)
        stats = error_distribution(t, p)
        for name in PARAM_NAMES:
            s = stats[name]
            assert s.std == 0.0
            assert s.hi - s.lo == pytest.approx(2e-9)
            assert s.counts.sum() == 10
            occupied = np.nonzero(s.counts)[0]
            assert len(occupied) == 1
            assert occupied[0] in (HIST_BINS // 2 - 1, HIST_BINS // 2)

    def test_bin_geometry(self):
        s = ParamErrorStats(1.0, 0.0, 1.0, -4.0, 4.0, np.zeros(64, np.int64))
        np.testing.assert_allclose(s.bin_edges, np.linspace(-4.0, 4.0, 65))
        np.testing.assert_allclose(s.bin_centers[0], -4.0 + 8.0 / 128.0)
        assert len(s.bin_centers) == 64

    def test_validation(self, rng):
        t = rng.uniform(0, 1, size=(5, 8))
        with pytest.raises(ValueError):
            error_distribution(t, t, bins=1)
        with pytest.raises(ValueError, match="no samples"):
            error_distribution(np.zeros((0, 8)), np.zeros((0, 8)))


class TestBenchmark:
    def test_warmup_excluded_and_counts(self):
        calls = []
        benchmark(calls.append, ["a", "b"], repetitions=2, warmup=1)
        # one warmup plus two timed repetitions per input
        assert calls == ["a", "a", "a", "b", "b", "b"]

    def test_statistics_from_fake_clock(self, monkeypatch):
        ticks = iter([0.0, 0.5, 10.0, 10.25])
        monkeypatch.setattr(evalbench.time, "perf_counter", lambda: next(ticks))
        t = benchmark(lambda _: None, [1, 2], repetitions=1, warmup=0)
        assert t.mean_s == pytest.approx(0.375)
        assert t.median_s == pytest.approx(0.375)
        assert t.std_s == pytest.approx(0.125)
        assert t.n_images == 2 and t.failures == 0

    def test_failures_excluded_and_counted(self):
        def shaky(x):
            if x == 13:
                raise RuntimeError("boom")
            return x

        t = benchmark(shaky, [1, 13, 2], repetitions=1)
        assert t.n_images == 2
        assert t.failures == 1

    def test_all_failures_rejected(self):
        def broken(_):
            raise RuntimeError("boom")

        with pytest.raises(ValueError, match="no successful"):
            benchmark(broken, [1, 2])

    def test_repetitions_validated(self):
        with pytest.raises(ValueError):
            benchmark(lambda _: None, [1], repetitions=0)

    def test_environment_recorded(self):
        t = benchmark(lambda _: None, [1])
        assert "numpy" in t.environment and "python" in t.environment


class TestReports:
    def test_mae_vector_order(self, rng):
        t = rng.uniform(0, 10, size=(20, 8))
        p = t + rng.normal(0, 1, size=(20, 8))
        m = evaluate_method(t, p)
        expected = mae(t, p)
        np.testing.assert_allclose(m.mae_vector(), expected)
        assert m.n_samples == 20

    def test_csv_round_trip_exact(self, rng):
        report = synth_report(rng)
        text = report_to_csv(report)
        back = report_from_csv(text)
        assert back.equals(report)
        assert report_to_csv(back) == text

    def test_csv_round_trip_without_timing(self, rng):
        report = synth_report(rng, with_timing=False, methods=("solo",))
        back = report_from_csv(report_to_csv(report))
        assert back.equals(report)
        assert back.methods["solo"].timing is None

    def test_csv_header_required(self):
        with pytest.raises(ValueError, match="CSV"):
            report_from_csv("foo,bar\n1,2\n")

    def test_text_table_layout(self, rng):
        report = synth_report(rng)
        text = format_text_table(report)
        lines = text.splitlines()
        assert any("cnn" in l for l in lines)
        for name in PARAM_NAMES:
            assert name in text
        assert "time/img" in text
        # published context rows present by default, removable on request
        assert "published" in text
        assert "1.8340" in text
        bare = format_text_table(report, include_reference=False)
        assert "published" not in bare

    def test_text_table_missing_timing_dash(self, rng):
        report = synth_report(rng, with_timing=False, methods=("solo",))
        row = [l for l in format_text_table(report).splitlines()
               if l.startswith("solo")][0]
        assert row.rstrip().endswith("-")

    def test_plot_data_files(self, rng, tmp_path):
        report = synth_report(rng)
        paths = write_plot_data(report, tmp_path)
        assert len(paths) == 2 * 8
        sample = next(p for p in paths if p.name == "cnn_a1.tsv")
        lines = sample.read_text().splitlines()
        s = report.methods["cnn"].errors["a1"]
        assert len(lines) == len(s.counts)
        c0, n0 = lines[0].split("\t")
        assert float(c0) == s.bin_centers[0]
        assert int(n0) == s.counts[0]

    def test_emit_report_writes_everything(self, rng, tmp_path):
        report = synth_report(rng)
        out = emit_report(report, tmp_path / "run")
        assert out["text"].exists() and out["csv"].exists()
        assert len(out["plot_data"]) == 16
        assert report_from_csv(out["csv"].read_text()).equals(report)


class TestPublishedReference:
    def test_reference_values_pinned(self):
        cnn = PUBLISHED_REFERENCE["cnn (published, full scale)"]
        it = PUBLISHED_REFERENCE["iterative (published, full scale)"]
        assert cnn["z0"] == 1.834 and cnn["time_s"] == 3.6e-3
        assert it["a3"] == 12.315 and it["time_s"] == 988.9e-3
        assert PUBLISHED_ERROR_STD == {"x0": 0.85, "y0": 0.97, "z0": 1.92}
        for ref in PUBLISHED_REFERENCE.values():
            assert set(ref) == set(PARAM_NAMES) | {"time_s"}
