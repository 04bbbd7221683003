"""Architecture presets, the training protocol, and prediction plumbing."""

import numpy as np
import pytest

from conftest import micro_arch
from sqrec.geometry import SuperquadricParams, scale_params
from sqrec.net.weights import ModelWeights, read_weights
from sqrec.regressor import (
    ArchitectureConfig,
    LayerSpec,
    PREDICTION_FLOOR,
    PRESETS,
    TrainConfig,
    TrainData,
    TrainLog,
    _batch_bounds,
    build_model,
    build_network,
    desk_scale,
    eval_loss,
    paper_scale,
    predict,
    predict_params,
    predict_scaled,
    prepare_inputs,
    restore_network,
    scale_targets,
    train,
)


def synth_data(rng, n_train=24, n_val=8, size=16):
    x_tr = rng.uniform(0, 1, size=(n_train, 1, size, size)).astype(np.float32)
    y_tr = rng.uniform(0.1, 0.9, size=(n_train, 8)).astype(np.float32)
    x_va = rng.uniform(0, 1, size=(n_val, 1, size, size)).astype(np.float32)
    y_va = rng.uniform(0.1, 0.9, size=(n_val, 8)).astype(np.float32)
    return TrainData(x_tr, y_tr, x_va, y_va)


class TestArchitectures:
    def test_paper_scale_layout(self):
        arch = paper_scale()
        convs = arch.conv_specs()
        assert arch.input_hw == (256, 256)
        assert len(convs) == 13
        assert convs[0].kernel == 7 and convs[0].stride == 2
        assert all(c.kernel == 3 for c in convs[1:])
        assert convs[-1].out_ch == 512
        head = arch.layers[-1]
        assert head.kind == "dense" and head.in_ch == 2048 and head.out_ch == 8
        assert head.activation == "linear"

    def test_desk_scale_layout(self):
        arch = desk_scale()
        convs = arch.conv_specs()
        assert arch.input_hw == (64, 64)
        assert len(convs) == 8
        assert convs[0].kernel == 5 and convs[0].stride == 2
        head = arch.layers[-1]
        assert head.in_ch == 2048 and head.out_ch == 8

    def test_presets_registered(self):
        assert set(PRESETS) == {"paper", "desk"}

    @pytest.mark.parametrize("preset,size", [("paper", 256), ("desk", 64)])
    def test_forward_shape(self, preset, size, rng):
        arch = PRESETS[preset]()
        net = build_network(arch)
        net.init_params(np.random.default_rng(0))
        x = rng.uniform(0, 1, size=(2, 1, size, size)).astype(np.float32)
        assert net.forward(x, train=False).shape == (2, 8)

    def test_validation_catches_channel_breaks(self):
        with pytest.raises(ValueError, match="channels"):
            ArchitectureConfig("bad", (16, 16), (
                LayerSpec("conv", 3, 1, 1, 4),
                LayerSpec("conv", 3, 1, 8, 8),
                LayerSpec("flatten"),
                LayerSpec("dense", in_ch=8 * 16 * 16, out_ch=8)))

    def test_validation_requires_linear_dense_head(self):
        with pytest.raises(ValueError, match="dense head"):
            ArchitectureConfig("bad", (4, 4), (
                LayerSpec("flatten"),
                LayerSpec("dense", in_ch=16, out_ch=8),
                LayerSpec("relu", in_ch=8, out_ch=8)))

    def test_validation_checks_flatten_size(self):
        with pytest.raises(ValueError, match="inputs"):
            ArchitectureConfig("bad", (16, 16), (
                LayerSpec("conv", 3, 2, 1, 4),
                LayerSpec("flatten"),
                LayerSpec("dense", in_ch=100, out_ch=8)))

    def test_digest_is_stable_and_discriminating(self):
        assert paper_scale().digest() == paper_scale().digest()
        assert paper_scale().digest() != desk_scale().digest()
        assert micro_arch(16).digest() != micro_arch(32).digest()
        assert len(paper_scale().digest()) == 32


class TestModelBuilding:
    def test_build_model_is_seed_deterministic(self):
        a = build_model(micro_arch(), seed=3)
        b = build_model(micro_arch(), seed=3)
        c = build_model(micro_arch(), seed=4)
        assert a.allclose(b)
        assert not a.allclose(c)
        for k in a.blocks:
            assert a.blocks[k].tobytes() == b.blocks[k].tobytes()

    def test_build_model_blocks_are_float32(self):
        w = build_model(micro_arch(), seed=0)
        assert all(v.dtype == np.float32 for v in w.blocks.values())

    def test_restore_rejects_wrong_architecture(self):
        w = build_model(micro_arch(16), seed=0)
        with pytest.raises(ValueError, match="match"):
            restore_network(micro_arch(32), w)

    def test_restore_round_trip(self, rng):
        arch = micro_arch()
        w = build_model(arch, seed=1)
        net = restore_network(arch, w)
        x = rng.uniform(0, 1, (2, 1, 16, 16)).astype(np.float32)
        y1 = net.forward(x)
        y2 = restore_network(arch, w).forward(x)
        np.testing.assert_array_equal(y1, y2)


class TestInputTargetPrep:
    def test_prepare_inputs_scaling_and_shape(self):
        depths = np.full((2, 4, 4), 128.0)
        x = prepare_inputs(depths)
        assert x.shape == (2, 1, 4, 4) and x.dtype == np.float32
        np.testing.assert_allclose(x, 0.5)

    def test_prepare_inputs_single_image(self):
        x = prepare_inputs(np.zeros((4, 4)))
        assert x.shape == (1, 1, 4, 4)

    def test_prepare_inputs_rejects_bad_rank(self):
        with pytest.raises(ValueError):
            prepare_inputs(np.zeros((1, 1, 4, 4)))

    def test_scale_targets_matches_parameter_scaling(self):
        p = SuperquadricParams(30, 40, 50, 0.3, 0.6, 100, 120, 140)
        row = scale_targets(p.as_array()[None])[0]
        np.testing.assert_allclose(row, scale_params(p), rtol=1e-6)
        assert row.dtype == np.float32


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="batch"):
            TrainConfig(batch_size=1)
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(patience=0)

    def test_lr_schedule_drops_after_edges(self):
        cfg = TrainConfig(lr=1e-3, lr_drop_epochs=(250, 500))
        assert cfg.lr_at(1) == 1e-3
        assert cfg.lr_at(250) == 1e-3
        assert cfg.lr_at(251) == pytest.approx(1e-4)
        assert cfg.lr_at(500) == pytest.approx(1e-4)
        assert cfg.lr_at(501) == pytest.approx(1e-5)


class TestBatchBounds:
    def test_even_division(self):
        assert _batch_bounds(8, 4) == [(0, 4), (4, 8)]

    def test_remainder_kept_when_larger_than_one(self):
        assert _batch_bounds(10, 4) == [(0, 4), (4, 8), (8, 10)]

    def test_trailing_singleton_merged(self):
        assert _batch_bounds(9, 4) == [(0, 4), (4, 9)]

    def test_small_n(self):
        assert _batch_bounds(3, 8) == [(0, 3)]


class TestTrainLog:
    def test_tsv_round_trip(self):
        log = TrainLog()
        from sqrec.regressor import EpochStats
        log.epochs = [EpochStats(1, 1e-3, 0.5, 0.6, 1.25),
                      EpochStats(2, 1e-3, 0.25, 0.30000000000000004, 1.5)]
        log.best_epoch, log.best_val_loss, log.stopped_on = 2, 0.3, "patience"
        back = TrainLog.from_tsv(log.to_tsv())
        assert back.best_epoch == 2
        assert back.stopped_on == "patience"
        assert back.deterministic_rows() == log.deterministic_rows()
        assert back.epochs[1].val_loss == 0.30000000000000004

    def test_deterministic_rows_exclude_wall_time(self):
        from sqrec.regressor import EpochStats
        log = TrainLog(epochs=[EpochStats(1, 1e-3, 0.5, 0.6, 123.0)])
        assert log.deterministic_rows() == [(1, 1e-3, 0.5, 0.6)]


class TestTrainData:
    def test_empty_split_rejected(self):
        z = np.zeros((0, 1, 4, 4), np.float32)
        with pytest.raises(ValueError, match="empty"):
            TrainData(z, np.zeros((0, 8)), z, np.zeros((0, 8)))

    def test_length_mismatch_rejected(self):
        x = np.zeros((4, 1, 4, 4), np.float32)
        y = np.zeros((3, 8), np.float32)
        with pytest.raises(ValueError, match="images vs"):
            TrainData(x, y, x, np.zeros((4, 8), np.float32))


class TestTraining:
    def test_loss_decreases_and_log_is_complete(self, rng):
        arch = micro_arch()
        data = synth_data(rng)
        w, log = train(arch, build_model(arch, seed=0), data,
                       TrainConfig(batch_size=8, lr=1e-2, max_epochs=12,
                                   patience=50, seed=1))
        assert len(log.epochs) == 12
        assert log.epochs[-1].train_loss < log.epochs[0].train_loss
        assert log.stopped_on == "max_epochs"
        assert all(e.wall_s > 0 for e in log.epochs)

    def test_training_is_deterministic(self, rng):
        arch = micro_arch()
        data = synth_data(rng)
        cfg = TrainConfig(batch_size=8, lr=1e-2, max_epochs=4, patience=50, seed=9)
        w1, log1 = train(arch, build_model(arch, seed=0), data, cfg)
        w2, log2 = train(arch, build_model(arch, seed=0), data, cfg)
        assert log1.deterministic_rows() == log2.deterministic_rows()
        for k in w1.blocks:
            assert w1.blocks[k].tobytes() == w2.blocks[k].tobytes()

    def test_returned_weights_are_validation_best(self, rng):
        arch = micro_arch()
        data = synth_data(rng)
        w, log = train(arch, build_model(arch, seed=0), data,
                       TrainConfig(batch_size=8, lr=1e-2, max_epochs=6,
                                   patience=50, seed=2))
        assert log.best_val_loss == min(e.val_loss for e in log.epochs)
        assert log.epochs[log.best_epoch - 1].val_loss == log.best_val_loss
        net = restore_network(arch, w)
        got = eval_loss(net, data.x_val, data.y_val, batch_size=8)
        assert got == pytest.approx(log.best_val_loss, abs=1e-12)

    def test_target_stop_returns_current_weights(self, rng):
        arch = micro_arch()
        data = synth_data(rng)
        w, log = train(arch, build_model(arch, seed=0), data,
                       TrainConfig(batch_size=8, lr=1e-2, max_epochs=50,
                                   patience=50, seed=3, target_train_loss=1e3))
        assert log.stopped_on == "target"
        assert len(log.epochs) == 1

    def test_patience_stops_training(self, rng):
        arch = micro_arch()
        data = synth_data(rng)
        w, log = train(arch, build_model(arch, seed=0), data,
                       TrainConfig(batch_size=8, lr=5e-2, max_epochs=200,
                                   patience=2, seed=4))
        assert log.stopped_on == "patience"
        last = log.epochs[-1].epoch
        assert last == log.best_epoch + 2
        assert len(log.epochs) < 200

    def test_checkpoint_written(self, rng, tmp_path):
        arch = micro_arch()
        data = synth_data(rng)
        path = tmp_path / "ckpt.sqwt"
        w, log = train(arch, build_model(arch, seed=0), data,
                       TrainConfig(batch_size=8, lr=1e-2, max_epochs=3,
                                   patience=50, seed=5), checkpoint_path=path)
        assert path.exists()
        assert read_weights(path).allclose(w)

    def test_input_size_mismatch_rejected(self, rng):
        arch = micro_arch(16)
        data = synth_data(rng, size=32)
        with pytest.raises(ValueError, match="expects"):
            train(arch, build_model(arch, seed=0), data, TrainConfig(batch_size=8))

    def test_nonfinite_loss_reported_with_location(self, rng):
        arch = micro_arch()
        weights = build_model(arch, seed=0)
        weights.blocks["head.weight"][0, 0] = np.nan
        data = synth_data(rng)
        with pytest.raises(RuntimeError, match="epoch 1"):
            train(arch, weights, data, TrainConfig(batch_size=8, max_epochs=2))


class TestPrediction:
    def test_predict_scaled_clamped(self, rng):
        arch = micro_arch()
        net = restore_network(arch, build_model(arch, seed=0))
        x = rng.uniform(0, 1, (5, 1, 16, 16)).astype(np.float32)
        out = predict_scaled(net, x)
        assert out.shape == (5, 8) and out.dtype == np.float64
        assert out.min() >= PREDICTION_FLOOR and out.max() <= 1.0

    def test_predict_params_always_valid(self, rng):
        arch = micro_arch()
        net = restore_network(arch, build_model(arch, seed=1))
        depths = rng.uniform(0, 256, (3, 16, 16))
        params = predict_params(net, depths)
        assert len(params) == 3
        for p in params:
            assert isinstance(p, SuperquadricParams)
            assert p.a1 > 0 and p.eps1 > 0 and p.eps2 <= 1.0

    def test_predict_single_image(self, rng):
        arch = micro_arch()
        w = build_model(arch, seed=2)
        depths = rng.uniform(0, 256, (16, 16))
        p = predict(arch, w, depths)
        assert isinstance(p, SuperquadricParams)
        with pytest.raises(ValueError, match="single"):
            predict(arch, w, depths[None])
        with pytest.raises(ValueError, match="expects"):
            predict(arch, w, depths[:8])

    def test_batching_does_not_change_predictions(self, rng):
        arch = micro_arch()
        net = restore_network(arch, build_model(arch, seed=3))
        x = rng.uniform(0, 1, (7, 1, 16, 16)).astype(np.float32)
        a = predict_scaled(net, x, batch_size=7)
        b = predict_scaled(net, x, batch_size=3)
        np.testing.assert_allclose(a, b, atol=1e-6)
