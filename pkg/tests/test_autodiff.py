import numpy as np
import pytest

from services.autodiff import Tape, backward, parameter
from services.errors import ShapeError, ValidationError
from services.gradcheck_suite import GRADCHECK_TOLERANCE, assert_gradients, run_gradcheck
from services.nn import AdamState, adam_step, count_parameters, init_lstm, lstm_cell, lstm_stack
from services.rng import RngStream


def reference_lstm_step(x, h, c, w_ih, w_hh, b):
    hidden = len(h)
    z = w_ih @ x + w_hh @ h + b
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))  # noqa: E731
    i, f, o = sig(z[:hidden]), sig(z[hidden:2 * hidden]), sig(z[2 * hidden:3 * hidden])
    g = np.tanh(z[3 * hidden:])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


class TestOps:

    def test_dense_identity(self):
        tape = Tape()
        x = tape.constant(np.array([[1.0, -2.0, 3.0]]))
        out = tape.dense(x, parameter(np.eye(3)), parameter(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_sigmoid_zero(self):
        assert Tape().sigmoid(parameter(np.zeros(4))).data.tolist() == [0.5] * 4

    def test_concat_order(self):
        tape = Tape()
        out = tape.concat([parameter([1.0, 2.0]), parameter([3.0])])
        assert out.data.tolist() == [1.0, 2.0, 3.0]

    def test_conv1d_cross_correlation(self):
        x = parameter([[0.0, 1.0, 0.0]])
        kernels = parameter([[[1.0, 2.0, 3.0]]])
        np.testing.assert_array_equal(Tape().conv1d(x, kernels).data, [[3.0, 2.0, 1.0]])

    def test_conv1d_identity_kernel(self):
        x = parameter(np.arange(10.0).reshape(2, 5))
        kernels = parameter(np.eye(2)[:, :, None])
        np.testing.assert_array_equal(Tape().conv1d(x, kernels).data, x.data)

    def test_conv1d_even_kernel(self):
        with pytest.raises(ShapeError):
            Tape().conv1d(parameter(np.ones((1, 4))), parameter(np.ones((1, 1, 2))))

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError):
            Tape().matmul(parameter(np.ones((2, 3))), parameter(np.ones((4, 2))))

    def test_mul_shape_mismatch(self):
        with pytest.raises(ShapeError):
            Tape().mul(parameter(np.ones(3)), parameter(np.ones(4)))

    def test_inputs_not_mutated(self):
        x = parameter(np.array([1.0, -1.0]))
        before = x.data.copy()
        tape = Tape()
        backward(tape, tape.sum(tape.relu(x)))
        np.testing.assert_array_equal(x.data, before)


class TestBackward:

    def test_linear_gradient(self):
        tape = Tape()
        w = parameter([0.5, -1.0, 2.0])
        x = parameter([3.0, 4.0, 5.0])
        grads = backward(tape, tape.sum(tape.mul(w, x)))
        np.testing.assert_array_equal(grads[w], x.data)
        np.testing.assert_array_equal(grads[x], w.data)

    def test_off_path_gradient_is_zero(self):
        tape = Tape()
        used, unused = parameter([1.0, 2.0]), parameter([3.0])
        grads = backward(tape, tape.sum(used))
        np.testing.assert_array_equal(grads[unused], [0.0])

    def test_non_scalar_loss(self):
        tape = Tape()
        with pytest.raises(ValidationError):
            backward(tape, tape.relu(parameter([1.0, 2.0])))

    def test_repeatable(self):
        rng = RngStream.named(0, "repeat")
        x, w = rng.normal_array((4, 3)), rng.normal_array((2, 3))

        def grad():
            tape = Tape()
            wp = parameter(w)
            return backward(tape, tape.sum(tape.tanh(tape.matmul(tape.constant(x), wp))))[wp]

        np.testing.assert_array_equal(grad(), grad())


class TestLstm:

    def test_zero_weights_zero_state(self):
        params = {"l.W_ih": parameter(np.zeros((8, 3))), "l.W_hh": parameter(np.zeros((8, 2))),
                  "l.b": parameter(np.zeros(8))}
        tape = Tape()
        h, c = lstm_cell(tape, parameter(np.ones(3)), tape.constant(np.zeros(2)), tape.constant(np.zeros(2)),
                         params, "l")
        np.testing.assert_array_equal(h.data, 0.0)
        np.testing.assert_array_equal(c.data, 0.0)

    def test_large_forget_bias_keeps_cell(self):
        b = np.zeros(8)
        b[2:4] = 50.0
        params = {"l.W_ih": parameter(np.zeros((8, 3))), "l.W_hh": parameter(np.zeros((8, 2))),
                  "l.b": parameter(b)}
        tape = Tape()
        c_prev = tape.constant(np.array([0.3, -0.7]))
        _, c = lstm_cell(tape, parameter(np.ones(3)), tape.constant(np.zeros(2)), c_prev, params, "l")
        np.testing.assert_allclose(c.data, c_prev.data, atol=1e-6)

    def test_matches_scalar_reference(self):
        rng = RngStream.named(3, "lstm")
        params = {}
        init_lstm(params, rng, "l", 3, 4)
        x, h, c = rng.normal_array(3), rng.normal_array(4, sigma=0.5), rng.normal_array(4, sigma=0.5)
        tape = Tape()
        h_new, c_new = lstm_cell(tape, tape.constant(x), tape.constant(h), tape.constant(c), params, "l")
        ref_h, ref_c = reference_lstm_step(x, h, c, params["l.W_ih"].data, params["l.W_hh"].data,
                                           params["l.b"].data)
        np.testing.assert_allclose(h_new.data, ref_h, atol=1e-12)
        np.testing.assert_allclose(c_new.data, ref_c, atol=1e-12)

    def test_forget_bias_initialized_to_one(self):
        params = {}
        init_lstm(params, RngStream.named(0, "l"), "l", 3, 4)
        np.testing.assert_array_equal(params["l.b"].data[4:8], 1.0)
        assert count_parameters(params) == 16 * 3 + 16 * 4 + 16

    def test_stack_output_shape(self):
        rng = RngStream.named(0, "stack")
        params = {}
        init_lstm(params, rng, "s0", 3, 5)
        init_lstm(params, rng, "s1", 5, 5)
        tape = Tape()
        sequence = [tape.constant(rng.normal_array((2, 3))) for _ in range(4)]
        assert lstm_stack(tape, sequence, params, "s", 2).shape == (2, 5)


class TestAdam:

    def test_zero_gradient_leaves_params(self):
        params = {"w": parameter([1.0, -2.0])}
        updated = adam_step(params, {"w": np.zeros(2)}, AdamState(lr=0.1))
        np.testing.assert_array_equal(updated["w"].data, [1.0, -2.0])

    def test_first_step_moves_by_lr(self):
        params = {"w": parameter([1.0, -2.0])}
        updated = adam_step(params, {"w": np.array([0.5, -3.0])}, AdamState(lr=0.1))
        np.testing.assert_allclose(updated["w"].data, [0.9, -1.9], atol=1e-6)
        np.testing.assert_array_equal(params["w"].data, [1.0, -2.0])

    def test_deterministic(self):
        def run():
            params = {"w": parameter([1.0, 2.0])}
            state = AdamState(lr=0.05)
            for step in range(5):
                params = adam_step(params, {"w": params["w"].data * (step + 1)}, state)
            return params["w"].data

        np.testing.assert_array_equal(run(), run())


class TestGradcheck:

    def test_every_block_passes(self):
        report = run_gradcheck(seed=0)
        assert set(report["block"]) >= {"dense", "sigmoid", "tanh", "relu", "concat", "elementwise_mul",
                                        "conv1d", "lstm_cell", "cross_attention", "fusion_forward",
                                        "blackbox_forward"}
        assert (report["max_rel_error"] < GRADCHECK_TOLERANCE).all()
        assert_gradients(report)

    def test_failure_is_reported(self):
        import pandas as pd
        from services.errors import NumericalError

        report = pd.DataFrame([{"block": "dense", "max_rel_error": 1.0, "passed": False}])
        with pytest.raises(NumericalError, match="dense"):
            assert_gradients(report)
