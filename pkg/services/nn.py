"""
Network blocks on top of the tape: initializers, LSTM cell and stack,
parameter counting, Adam and finite-difference gradient checking.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from services.autodiff import Tape, Tensor, backward, parameter
from services.errors import ShapeError, ValidationError

logger = logging.getLogger(__name__)


def glorot(rng, shape, fan_in, fan_out, name):
    """Normal init with variance 2 / (fan_in + fan_out)"""
    sigma = math.sqrt(2.0 / (fan_in + fan_out))
    return parameter(rng.normal_array(shape, sigma=sigma), name=name)


def zeros(shape, name, value=0.0):
    return parameter(np.full(shape, value, dtype=np.float64), name=name)


def init_dense(params, rng, prefix, n_in, n_out):
    params[f"{prefix}.W"] = glorot(rng, (n_out, n_in), n_in, n_out, f"{prefix}.W")
    params[f"{prefix}.b"] = zeros((n_out,), f"{prefix}.b")


def init_conv(params, rng, prefix, c_in, c_out, k):
    params[f"{prefix}.K"] = glorot(rng, (c_out, c_in, k), c_in * k, c_out * k, f"{prefix}.K")
    params[f"{prefix}.b"] = zeros((c_out,), f"{prefix}.b")


def init_lstm(params, rng, prefix, n_in, hidden, forget_bias=1.0):
    """Gate blocks are stacked i, f, o, g along the first axis"""
    params[f"{prefix}.W_ih"] = glorot(rng, (4 * hidden, n_in), n_in, hidden, f"{prefix}.W_ih")
    params[f"{prefix}.W_hh"] = glorot(rng, (4 * hidden, hidden), hidden, hidden, f"{prefix}.W_hh")
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = forget_bias
    params[f"{prefix}.b"] = parameter(bias, name=f"{prefix}.b")


def lstm_cell(tape, x, h_prev, c_prev, params, prefix):
    """
    One LSTM step.

    i, f, o = sigmoid(.), g = tanh(.) of W_ih x + W_hh h_prev + b;
    c = f * c_prev + i * g; h = o * tanh(c)

    Returns:
        tuple: (h, c)
    """
    w_ih, w_hh, b = params[f"{prefix}.W_ih"], params[f"{prefix}.W_hh"], params[f"{prefix}.b"]
    hidden = w_hh.shape[1]
    if h_prev.shape[-1] != hidden or c_prev.shape != h_prev.shape:
        raise ShapeError("lstm_cell state", h_prev.shape, c_prev.shape)
    if x.shape[-1] != w_ih.shape[1]:
        raise ShapeError("lstm_cell input", x.shape, w_ih.shape)
    z = tape.add(tape.dense(x, w_ih, b), tape.matmul(h_prev, w_hh))
    i = tape.sigmoid(tape.slice_last(z, 0, hidden))
    f = tape.sigmoid(tape.slice_last(z, hidden, 2 * hidden))
    o = tape.sigmoid(tape.slice_last(z, 2 * hidden, 3 * hidden))
    g = tape.tanh(tape.slice_last(z, 3 * hidden, 4 * hidden))
    c = tape.add(tape.mul(f, c_prev), tape.mul(i, g))
    h = tape.mul(o, tape.tanh(c))
    return h, c


def lstm_stack(tape, inputs, params, prefix, layers):
    """
    Run stacked LSTM layers over a sequence.

    Args:
        inputs (list): per-timestep Tensors [batch, n_in]
        layers (int): number of stacked layers

    Returns:
        Tensor: final hidden state of the top layer
    """
    sequence = list(inputs)
    batch_shape = sequence[0].shape[:-1]
    for layer in range(layers):
        name = f"{prefix}{layer}"
        hidden = params[f"{name}.W_hh"].shape[1]
        h = tape.constant(np.zeros(batch_shape + (hidden,), dtype=sequence[0].data.dtype))
        c = tape.constant(np.zeros_like(h.data))
        outputs = []
        for x in sequence:
            h, c = lstm_cell(tape, x, h, c, params, name)
            outputs.append(h)
        sequence = outputs
    return sequence[-1]


def count_parameters(params):
    return int(sum(t.size for t in params.values()))


def copy_params(params):
    return {name: parameter(t.data.copy(), name=name) for name, t in params.items()}


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators, one pair per named parameter"""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """
    Apply one Adam update.

    Args:
        params (dict): name -> Tensor
        grads (dict): name -> gradient array
        state (AdamState): accumulators, advanced in place

    Returns:
        dict: new name -> Tensor mapping; input tensors are left untouched
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    updated = {}
    for name, tensor in params.items():
        grad = grads[name]
        if grad.shape != tensor.shape:
            raise ShapeError(f"adam {name}", tensor.shape, grad.shape)
        m = state.m.get(name, np.zeros_like(tensor.data))
        v = state.v.get(name, np.zeros_like(tensor.data))
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad * grad
        state.m[name], state.v[name] = m, v
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        updated[name] = parameter(tensor.data - update, name=name)
    return updated


def gradcheck(build_loss, params, eps=1e-5, max_entries=None, rng=None):
    """
    Compare tape gradients with central finite differences.

    Relative error per entry is |a - n| / max(|a| + |n|, 1e-5).

    Args:
        build_loss (callable): (tape, params) -> scalar Tensor
        params (dict): name -> Tensor, float64
        eps (float): perturbation
        max_entries (int): check at most this many entries per parameter
        rng (RngStream): picks the entries when max_entries is set

    Returns:
        dict: name -> max relative error
    """
    tape = Tape()
    loss = build_loss(tape, params)
    grads = backward(tape, loss)
    report = {}
    for name, tensor in params.items():
        if tensor.data.dtype != np.float64:
            raise ValidationError("gradient checks are defined at float64 only", path=name)
        analytic = grads[tensor].ravel()
        indices = np.arange(tensor.size)
        if max_entries is not None and tensor.size > max_entries:
            picks = rng.permutation(tensor.size)[:max_entries] if rng is not None else indices[:max_entries]
            indices = np.sort(picks)
        worst = 0.0
        for index in indices:
            values = []
            for sign in (1.0, -1.0):
                data = tensor.data.copy().ravel()
                data[index] += sign * eps
                perturbed = dict(params)
                perturbed[name] = Tensor(data.reshape(tensor.shape), requires_grad=True, name=name)
                values.append(float(build_loss(Tape(), perturbed).data))
            numeric = (values[0] - values[1]) / (2.0 * eps)
            a = float(analytic[index])
            error = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-5)
            worst = max(worst, error)
        report[name] = worst
    return report
