import numpy as np

from services.autodiff import Tape, parameter
from services.blackbox import BlackboxConfig, BlackboxModel, predict_blackbox, self_attention, train_blackbox
from services.fusion import FusionConfig, FusionModel
from services.rng import RngStream
from services.training import TrainConfig

TINY_BLACKBOX = {"channels": [4, 4], "dense": [6], "hidden": 6, "fc_hidden": 4}


class TestBlackbox:

    def test_parameter_ratio(self):
        fusion = FusionModel.initialize(FusionConfig(), RngStream.named(0, "fusion"))
        blackbox = BlackboxModel.initialize(BlackboxConfig(), RngStream.named(0, "blackbox"))
        assert blackbox.parameter_count() >= 10 * fusion.parameter_count()

    def test_needs_no_selector(self, noise_free_trace):
        config = TrainConfig(epochs=2, model=TINY_BLACKBOX)
        result = train_blackbox([noise_free_trace], config)
        assert result.model.all_anchors
        assert result.model.config.rf_dim == 10
        est = predict_blackbox(result.model, noise_free_trace)
        assert len(est) == len(noise_free_trace) - result.model.window + 1
        assert np.all(np.isfinite(est.xy()))

    def test_self_attention_parameters(self):
        model = BlackboxModel.initialize(BlackboxConfig(rf_dim=10, channels=(4,), dense=(6,), hidden=4,
                                                        fc_hidden=3), RngStream.named(0, "b"))
        for prefix in ("rf", "vo"):
            assert model.params[f"self.{prefix}.W1"].shape == (6, 6)
        assert model.params["lstm0.W_ih"].shape == (16, 12)

    def test_zero_self_attention_weights_give_half(self):
        tape = Tape()
        f = tape.constant(np.array([[0.4, -2.0, 1.5]]))
        params = {f"self.rf.{name}": parameter(np.zeros((3, 3))) for name in ("W1", "W2")}
        gated, mask = self_attention(tape, f, params, "rf")
        np.testing.assert_array_equal(mask.data, 0.5)
        np.testing.assert_allclose(gated.data, [[0.2, -1.0, 0.75]])

    def test_self_attention_hand_computed(self):
        tape = Tape()
        f = tape.constant(np.array([[1.0, 2.0]]))
        params = {"self.vo.W1": parameter(np.eye(2)), "self.vo.W2": parameter(np.diag([0.5, -1.0]))}
        _, mask = self_attention(tape, f, params, "vo")
        expected = 1.0 / (1.0 + np.exp(-np.array([0.5, -4.0])))
        np.testing.assert_allclose(mask.data, [expected], atol=1e-12)
