"""
Finite-difference checks of every differentiable block and of the composed
fusion and blackbox forward passes, on small float64 instances.
"""
import logging

import numpy as np
import pandas as pd

from services.autodiff import parameter
from services.blackbox import BlackboxConfig, BlackboxModel
from services.errors import NumericalError
from services.fusion import FusionConfig, FusionModel, cross_attention, fuse
from services.nn import gradcheck, init_lstm, lstm_cell
from services.rng import RngStream
from services.training import squared_error_loss

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4


def _projected(tape, out, weights):
    """Scalar loss sum(out * weights) so every output entry gets its own gradient"""
    return tape.sum(tape.mul(out, tape.constant(weights)))


def _block_cases(rng):
    def arr(*shape, sigma=1.0):
        return rng.normal_array(shape, sigma=sigma)

    cases = {}

    w_dense = arr(2, 5)
    cases["dense"] = (
        lambda tape, p: _projected(tape, tape.dense(p["x"], p["W"], p["b"]), w_dense),
        {"x": parameter(arr(2, 4)), "W": parameter(arr(5, 4)), "b": parameter(arr(5))},
    )
    for name in ("sigmoid", "tanh"):
        w_act = arr(3, 4)
        cases[name] = (
            lambda tape, p, op=name, w=w_act: _projected(tape, getattr(tape, op)(p["x"]), w),
            {"x": parameter(arr(3, 4))},
        )
    # keep relu inputs away from the kink
    x_relu = arr(3, 4)
    x_relu = np.where(np.abs(x_relu) < 0.1, 0.5, x_relu)
    w_relu = arr(3, 4)
    cases["relu"] = (lambda tape, p: _projected(tape, tape.relu(p["x"]), w_relu), {"x": parameter(x_relu)})

    w_cat = arr(2, 7)
    cases["concat"] = (
        lambda tape, p: _projected(tape, tape.concat([p["a"], p["b"]]), w_cat),
        {"a": parameter(arr(2, 3)), "b": parameter(arr(2, 4))},
    )
    w_mul = arr(2, 3)
    cases["elementwise_mul"] = (
        lambda tape, p: _projected(tape, tape.mul(p["a"], p["b"]), w_mul),
        {"a": parameter(arr(2, 3)), "b": parameter(arr(2, 3))},
    )
    w_conv = arr(2, 3, 6)
    cases["conv1d"] = (
        lambda tape, p: _projected(tape, tape.conv1d(p["x"], p["K"], p["b"]), w_conv),
        {"x": parameter(arr(2, 2, 6)), "K": parameter(arr(3, 2, 3)), "b": parameter(arr(3))},
    )

    lstm_params = {}
    init_lstm(lstm_params, rng, "cell", 3, 4)
    lstm_params.update({"x": parameter(arr(2, 3)), "h": parameter(arr(2, 4, sigma=0.5)),
                        "c": parameter(arr(2, 4, sigma=0.5))})
    w_h, w_c = arr(2, 4), arr(2, 4)

    def lstm_loss(tape, p):
        h, c = lstm_cell(tape, p["x"], p["h"], p["c"], p, "cell")
        return tape.add(_projected(tape, h, w_h), _projected(tape, c, w_c))

    cases["lstm_cell"] = (lstm_loss, lstm_params)

    attn_params = {f"attn.{n}": parameter(arr(4, 4, sigma=0.5)) for n in ("vo_W1", "vo_W2", "rf_W1", "rf_W2")}
    attn_params.update({"f_r": parameter(arr(2, 4)), "f_v": parameter(arr(2, 4))})
    w_att = arr(2, 8)

    def attention_loss(tape, p):
        masks = cross_attention(tape, p["f_r"], p["f_v"], p)
        return _projected(tape, fuse(tape, p["f_r"], p["f_v"], masks), w_att)

    cases["cross_attention"] = (attention_loss, attn_params)

    config = FusionConfig(rf_dim=4, vo_dim=3, channels=(3, 4), hidden=5, layers=2, fc_hidden=4, window=3)
    model = FusionModel.initialize(config, rng)
    model.stats = {"rf": (np.zeros(4), np.ones(4)), "vo": (np.zeros(3), np.ones(3)), "target_mean": np.zeros(2)}
    inputs = {"rf": arr(2, 3, 4), "vo": arr(2, 3, 3)}
    target = arr(2, 2)
    cases["fusion_forward"] = (
        lambda tape, p: squared_error_loss(tape, model.forward_batch(tape, p, inputs), target),
        model.params,
    )

    bb_config = BlackboxConfig(rf_dim=4, vo_dim=3, channels=(3,), dense=(4,), hidden=4, layers=1,
                               fc_hidden=3, window=3)
    blackbox = BlackboxModel.initialize(bb_config, rng)
    blackbox.stats = {"raw_rf": (np.zeros(4), np.ones(4)), "vo": (np.zeros(3), np.ones(3)),
                      "target_mean": np.zeros(2)}
    bb_inputs = {"raw_rf": arr(2, 3, 4), "vo": arr(2, 3, 3)}
    cases["blackbox_forward"] = (
        lambda tape, p: squared_error_loss(tape, blackbox.forward_batch(tape, p, bb_inputs), target),
        blackbox.params,
    )
    return cases


def run_gradcheck(seed=0, eps=1e-5, max_entries=32):
    """
    Returns:
        pandas.DataFrame: block, max_rel_error, passed
    """
    rng = RngStream.named(seed, "gradcheck")
    rows = []
    for block, (build_loss, params) in _block_cases(rng.child("cases")).items():
        report = gradcheck(build_loss, params, eps=eps, max_entries=max_entries, rng=rng.child(block))
        worst = max(report.values())
        rows.append({"block": block, "max_rel_error": worst, "passed": worst < GRADCHECK_TOLERANCE})
        logger.info(f"gradcheck {block}: max relative error {worst:.3e}")
    return pd.DataFrame(rows, columns=["block", "max_rel_error", "passed"])


def assert_gradients(report):
    failed = report[~report["passed"]]
    if len(failed):
        raise NumericalError(f"gradient check failed for {', '.join(failed['block'])}")
