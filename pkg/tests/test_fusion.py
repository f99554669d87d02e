import math

import numpy as np
import pytest

from models import Position2D
from services.anchor_selector import AnchorSelectorModel
from services.autodiff import Tape, parameter
from services.errors import ValidationError
from services.fusion import (
    FusionConfig, FusionModel, attention_report, cross_attention, forward, fuse, train_fusion,
)
from services.rng import RngStream
from services.training import TrainConfig, make_windows, normalize_features, predict_trace, split_windows
from services.features import build_epoch_features


def attention_params(c, **overrides):
    params = {f"attn.{n}": parameter(np.zeros((c, c))) for n in ("vo_W1", "vo_W2", "rf_W1", "rf_W2")}
    params.update({f"attn.{n}": parameter(w) for n, w in overrides.items()})
    return params


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def fast_config(tiny_model, **overrides):
    values = dict(epochs=3, learning_rate=1e-2, no_anchor_selection=True, model=tiny_model)
    values.update(overrides)
    return TrainConfig(**values)


class TestCrossAttention:

    def test_zero_weights_give_half(self):
        tape = Tape()
        f = tape.constant(np.array([[0.3, -1.2, 2.0]]))
        vo_gate, rf_gate = cross_attention(tape, f, f, attention_params(3))
        np.testing.assert_array_equal(vo_gate.data, 0.5)
        np.testing.assert_array_equal(rf_gate.data, 0.5)

    def test_hand_computed_mask(self):
        tape = Tape()
        f_r = tape.constant(np.array([[5.0, -5.0]]))
        f_v = tape.constant(np.array([[1.0, 2.0]]))
        params = attention_params(2, vo_W1=np.eye(2), vo_W2=np.diag([0.5, -1.0]))
        vo_gate, rf_gate = cross_attention(tape, f_r, f_v, params)
        np.testing.assert_allclose(vo_gate.data, [[sigmoid(0.5), sigmoid(-4.0)]], atol=1e-12)
        np.testing.assert_array_equal(rf_gate.data, 0.5)

    def test_swap_uses_other_sensor(self):
        tape = Tape()
        f_r = tape.constant(np.array([[1.0, 2.0]]))
        f_v = tape.constant(np.array([[7.0, -3.0]]))
        params = attention_params(2, vo_W1=np.eye(2), vo_W2=np.diag([0.5, -1.0]))
        vo_gate, _ = cross_attention(tape, f_r, f_v, params, swap=True)
        np.testing.assert_allclose(vo_gate.data, [[sigmoid(0.5), sigmoid(-4.0)]], atol=1e-12)

    def test_mask_bounds(self):
        rng = RngStream.named(0, "mask")
        tape = Tape()
        f = tape.constant(rng.normal_array((16, 4), sigma=5.0))
        params = {f"attn.{n}": parameter(rng.normal_array((4, 4))) for n in ("vo_W1", "vo_W2", "rf_W1", "rf_W2")}
        for mask in cross_attention(tape, f, f, params):
            assert np.all((mask.data >= 0.0) & (mask.data <= 1.0))

    def test_width_mismatch(self):
        tape = Tape()
        with pytest.raises(ValidationError):
            cross_attention(tape, tape.constant(np.ones((1, 3))), tape.constant(np.ones((1, 3))),
                            attention_params(2))


class TestFuse:

    def test_unit_masks_concatenate(self):
        tape = Tape()
        f_r, f_v = tape.constant(np.array([[1.0, 2.0]])), tape.constant(np.array([[3.0, 4.0]]))
        ones = tape.constant(np.ones((1, 2)))
        out = fuse(tape, f_r, f_v, (ones, ones))
        assert out.data.tolist() == [[3.0, 4.0, 1.0, 2.0]]

    def test_half_masks_halve(self):
        tape = Tape()
        f_r, f_v = tape.constant(np.array([[1.0, 2.0]])), tape.constant(np.array([[3.0, 4.0]]))
        half = tape.constant(np.full((1, 2), 0.5))
        assert fuse(tape, f_r, f_v, (half, half)).data.tolist() == [[1.5, 2.0, 0.5, 1.0]]

    def test_shape_mismatch(self):
        tape = Tape()
        f = tape.constant(np.ones((1, 2)))
        with pytest.raises(ValidationError):
            fuse(tape, f, f, (tape.constant(np.ones((1, 3))), f))


class TestFeatures:

    def test_selected_anchor_features(self, noise_free_trace):
        n = len(noise_free_trace.layout)
        selector = AnchorSelectorModel(
            chain_order=noise_free_trace.layout.ids, k=3,
            weights=[np.zeros(2 * n + link + 1) for link in range(n)],
            input_mean=np.zeros(2 * n), input_scale=np.ones(2 * n),
        )
        features = build_epoch_features(noise_free_trace, selector, k=3)
        assert features.rf.shape == (len(noise_free_trace), 8)
        assert features.vo.shape == (len(noise_free_trace), 3)
        np.testing.assert_allclose(features.rf[:, :2], features.gt, atol=1e-6)

    def test_selector_required(self, noise_free_trace):
        with pytest.raises(ValidationError):
            build_epoch_features(noise_free_trace, None, k=3)

    def test_all_anchor_features(self, noise_free_trace):
        features = build_epoch_features(noise_free_trace, all_anchors=True)
        assert features.rf.shape[1] == 2 + 2 * 5
        assert features.raw_rf.shape[1] == 10

    def test_windows(self, noise_free_trace):
        features = build_epoch_features(noise_free_trace, all_anchors=True)
        windows = make_windows(features, ("rf", "vo"), 8)
        assert len(windows) == len(noise_free_trace) - 7
        assert windows.inputs["rf"].shape == (len(windows), 8, 12)
        np.testing.assert_array_equal(windows.target[0], features.gt[7])

    def test_chronological_split(self, noise_free_trace):
        features = build_epoch_features(noise_free_trace, all_anchors=True)
        train, val, test = split_windows(make_windows(features, ("rf", "vo"), 8), (0.7, 0.1, 0.2))
        assert train.t.max() < val.t.min() < test.t.min()


class TestNormalization:

    def test_constant_feature_maps_to_zero(self):
        train = np.column_stack([np.full(10, 3.0), np.arange(10.0)])
        normalized, _, _, _ = normalize_features(train)
        np.testing.assert_array_equal(normalized[:, 0], 0.0)

    def test_stats_from_training_rows_only(self):
        train = np.arange(10.0)[:, None]
        normalized, (val,), means, _ = normalize_features(train, np.full((4, 1), 100.0))
        assert abs(normalized.mean()) < 1e-12
        assert means[0] == 4.5
        assert val.mean() > 0

    def test_mean_only_by_default(self):
        train = np.column_stack([np.arange(10.0) * 3.0, np.linspace(-50.0, -90.0, 10)])
        normalized, _, means, scales = normalize_features(train)
        np.testing.assert_array_equal(scales, 1.0)
        np.testing.assert_allclose(normalized, train - train.mean(axis=0), atol=1e-12)
        assert normalized[:, 0].std() == pytest.approx(train[:, 0].std())

    def test_optional_unit_variance(self):
        train = np.column_stack([np.arange(10.0) * 3.0, np.linspace(-50.0, -90.0, 10)])
        normalized, _, _, _ = normalize_features(train, scale=True)
        np.testing.assert_allclose(normalized.std(axis=0), 1.0)

    def test_trained_model_keeps_unit_scales(self, noise_free_trace, tiny_model):
        model = train_fusion([noise_free_trace], fast_config(tiny_model, epochs=1)).model
        for key in model.input_keys:
            means, scales = model.stats[key]
            np.testing.assert_array_equal(scales, 1.0)
            assert np.all(np.isfinite(means))

    def test_empty_training(self):
        with pytest.raises(ValidationError):
            normalize_features(np.zeros((0, 3)))


class TestFusionModel:

    def test_training_reduces_loss(self, noise_free_trace, tiny_model):
        result = train_fusion([noise_free_trace], fast_config(tiny_model, epochs=8))
        log = result.log
        assert list(log["epoch"]) == list(range(1, 9))
        assert log["train_loss"].iloc[-1] < log["train_loss"].iloc[0]
        assert len(result.test) > 0

    def test_same_seed_same_weights(self, noise_free_trace, tiny_model):
        a = train_fusion([noise_free_trace], fast_config(tiny_model, epochs=2)).model
        b = train_fusion([noise_free_trace], fast_config(tiny_model, epochs=2)).model
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].data, b.params[name].data)

    def test_predict_trace(self, noise_free_trace, tiny_model):
        model = train_fusion([noise_free_trace], fast_config(tiny_model, epochs=1)).model
        est = predict_trace(model, noise_free_trace)
        assert len(est) == len(noise_free_trace) - model.window + 1
        assert est.first.t == noise_free_trace.rf[model.window - 1].t

    def test_forward_single_window(self, noise_free_trace, tiny_model):
        model = train_fusion([noise_free_trace], fast_config(tiny_model, epochs=1)).model
        windows = model.windows_for(noise_free_trace)
        window = {key: windows.inputs[key][10] for key in model.input_keys}
        p = forward(model, window)
        assert isinstance(p, Position2D)
        np.testing.assert_allclose([p.x, p.y], model.predict_windows(windows.subset([10]))[0], atol=1e-12)

    def test_forward_wrong_length(self, noise_free_trace, tiny_model):
        model = train_fusion([noise_free_trace], fast_config(tiny_model, epochs=1)).model
        with pytest.raises(ValidationError):
            forward(model, {"rf": np.zeros((3, 12)), "vo": np.zeros((3, 3))})

    def test_attention_report(self, noise_free_trace, tiny_model):
        model = train_fusion([noise_free_trace], fast_config(tiny_model, epochs=1)).model
        report = attention_report(model, noise_free_trace)
        assert list(report.columns) == ["t", "rf_mask", "vo_mask"]
        assert len(report) == len(noise_free_trace) - model.window + 1
        assert report[["rf_mask", "vo_mask"]].stack().between(0.0, 1.0).all()

    def test_without_cross_attention(self, noise_free_trace, tiny_model):
        model = train_fusion([noise_free_trace], fast_config(tiny_model, epochs=1, no_cross_attention=True)).model
        assert len(predict_trace(model, noise_free_trace)) == len(noise_free_trace) - model.window + 1
        with pytest.raises(ValidationError):
            attention_report(model, noise_free_trace)

    def test_trace_shorter_than_window(self, noise_free_trace, tiny_model):
        from dataclasses import replace
        from models import Trajectory

        model = train_fusion([noise_free_trace], fast_config(tiny_model, epochs=1)).model
        short = replace(noise_free_trace, gt=Trajectory(noise_free_trace.gt.samples[:4]),
                        rf=noise_free_trace.rf[:4], vo=noise_free_trace.vo[:4])
        with pytest.raises(ValidationError):
            predict_trace(model, short)

    def test_insufficient_windows(self, noise_free_trace, tiny_model):
        with pytest.raises(ValidationError):
            train_fusion([noise_free_trace], fast_config(tiny_model, window=400))

    def test_default_architecture_size(self):
        model = FusionModel.initialize(FusionConfig(), RngStream.named(0, "init"))
        assert 50_000 < model.parameter_count() < 80_000
