"""
Learned RF/VO fusion: per-sensor CNN encoders over the window, jointly
learned attention masks, fused feature, stacked LSTM and a two-layer FC head
predicting the absolute position.

Mask convention: for an encoded feature e and square weights W1, W2,
mask = sigmoid((W1 e) * (W2 e)), the diagonal of the bilinear form
(W1 e)^T (W2 e), so every encoded channel gets its own gate. By default the
VO gate is computed from the VO features and the RF gate from the RF
features; `swap_attention` computes each gate from the other sensor's
features instead.
"""
import logging
from dataclasses import dataclass, asdict

import numpy as np
import pandas as pd

from models import Position2D
from services.autodiff import Tape
from services.errors import ShapeError, ValidationError
from services.nn import init_conv, init_dense, init_lstm, lstm_stack
from services.training import SequenceModel, train_sequence_model

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FusionConfig:
    rf_dim: int = 8
    vo_dim: int = 3
    channels: tuple = (8, 16)
    kernel: int = 3
    hidden: int = 64
    layers: int = 2
    fc_hidden: int = 32
    window: int = 8
    swap_attention: bool = False

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != 2:
            raise ValidationError("fusion encoders have exactly two conv layers", path="model.channels")

    def to_dict(self):
        data = asdict(self)
        data["channels"] = list(self.channels)
        return data


def encode(tape, params, prefix, x):
    """Two same-padded conv1d + relu layers: [B, d, L] -> [B, C, L]"""
    for layer in range(2):
        x = tape.relu(tape.conv1d(x, params[f"{prefix}.conv{layer}.K"], params[f"{prefix}.conv{layer}.b"]))
    return x


def attention_mask(tape, features, w1, w2):
    """sigmoid((W1 e) * (W2 e)) per channel"""
    return tape.sigmoid(tape.mul(tape.matmul(features, w1), tape.matmul(features, w2)))


def cross_attention(tape, f_r, f_v, params, swap=False):
    """
    Masks for one epoch.

    Args:
        f_r (Tensor): encoded RF features [..., C]
        f_v (Tensor): encoded VO features [..., C]
        params (dict): vo_W1, vo_W2, rf_W1, rf_W2 under "attn."
        swap (bool): compute the VO gate from f_r and the RF gate from f_v

    Returns:
        tuple: (gate for the VO features, gate for the RF features)
    """
    vo_source, rf_source = (f_r, f_v) if swap else (f_v, f_r)
    w = {name: params[f"attn.{name}"] for name in ("vo_W1", "vo_W2", "rf_W1", "rf_W2")}
    if w["vo_W1"].shape[0] != f_v.shape[-1] or w["rf_W1"].shape[0] != f_r.shape[-1]:
        raise ShapeError("cross_attention", f_r.shape, f_v.shape)
    vo_gate = attention_mask(tape, vo_source, w["vo_W1"], w["vo_W2"])
    rf_gate = attention_mask(tape, rf_source, w["rf_W1"], w["rf_W2"])
    return vo_gate, rf_gate


def fuse(tape, f_r, f_v, masks):
    """Gated VO features followed by gated RF features"""
    vo_gate, rf_gate = masks
    if vo_gate.shape != f_v.shape or rf_gate.shape != f_r.shape:
        raise ShapeError("fuse", vo_gate.shape, f_v.shape)
    return tape.concat([tape.mul(vo_gate, f_v), tape.mul(rf_gate, f_r)])


def init_fusion_params(config, rng):
    params = {}
    c0, c1 = config.channels
    for prefix, dim in (("rf", config.rf_dim), ("vo", config.vo_dim)):
        init_conv(params, rng, f"{prefix}.conv0", dim, c0, config.kernel)
        init_conv(params, rng, f"{prefix}.conv1", c0, c1, config.kernel)
    for name in ("vo_W1", "vo_W2", "rf_W1", "rf_W2"):
        init_dense(params, rng, f"attn.{name}", c1, c1)
        del params[f"attn.{name}.b"]
        params[f"attn.{name}"] = params.pop(f"attn.{name}.W")
    init_lstm(params, rng, "lstm0", 2 * c1, config.hidden)
    for layer in range(1, config.layers):
        init_lstm(params, rng, f"lstm{layer}", config.hidden, config.hidden)
    init_dense(params, rng, "fc0", config.hidden, config.fc_hidden)
    init_dense(params, rng, "fc1", config.fc_hidden, 2)
    return params


class FusionModel(SequenceModel):
    """Algorithm-assisted fusion over composed RF and VO features"""

    kind = "fusion"
    input_keys = ("rf", "vo")
    config_class = FusionConfig

    @classmethod
    def initialize(cls, config, rng, **kwargs):
        return cls(config, init_fusion_params(config, rng), **kwargs)

    def network(self, tape, params, inputs, masks=None):
        e_r = encode(tape, params, "rf", inputs["rf"])
        e_v = encode(tape, params, "vo", inputs["vo"])
        sequence = []
        for step in range(self.window):
            f_r = tape.take(e_r, step, axis=2)
            f_v = tape.take(e_v, step, axis=2)
            if self.no_cross_attention:
                # features merged directly, no gating
                sequence.append(tape.concat([f_v, f_r]))
                continue
            vo_gate, rf_gate = cross_attention(tape, f_r, f_v, params, self.config.swap_attention)
            if masks is not None:
                masks.append((rf_gate.data, vo_gate.data))
            sequence.append(fuse(tape, f_r, f_v, (vo_gate, rf_gate)))
        h = lstm_stack(tape, sequence, params, "lstm", self.config.layers)
        hidden = tape.relu(tape.dense(h, params["fc0.W"], params["fc0.b"]))
        return tape.dense(hidden, params["fc1.W"], params["fc1.b"])



def train_fusion(traces, config=None, selector=None):
    """
    Train the fusion model on sliding windows of the given traces.

    Args:
        traces (list): simulated traces
        config (TrainConfig): training regime and ablation flags
        selector (AnchorSelectorModel): anchor selection for the RF features; not needed
            with the no_anchor_selection ablation

    Returns:
        TrainResult: best-validation model, per-epoch log, held-out test windows
    """
    return train_sequence_model(FusionModel, traces, config, selector)


def forward(model, window):
    """
    Predict the position at the last epoch of one window.

    Args:
        model (SequenceModel): trained or initialized model
        window (dict): input key -> [L, d] raw feature rows

    Returns:
        Position2D: predicted position
    """
    batch = {}
    for key in model.input_keys:
        rows = np.asarray(window[key], dtype=float)
        if rows.ndim != 2 or rows.shape[0] != model.window:
            raise ValidationError(f"window {key} must have {model.window} rows, got shape {rows.shape}",
                                  path="window")
        batch[key] = rows[None]
    xy = model.forward_batch(Tape(), model.params, batch).data[0]
    return Position2D(float(xy[0]), float(xy[1]))


def attention_report(model, trace, batch_size=256):
    """
    Mean mask value per epoch on each side.

    Returns:
        pandas.DataFrame: columns t, rf_mask (gate on the RF features) and
        vo_mask (gate on the VO features) at the last step of every window
    """
    if model.no_cross_attention:
        raise ValidationError("model was trained without cross-attention", path="model")
    windows = model.windows_for(trace)
    rf_means, vo_means = [], []
    for start in range(0, len(windows), batch_size):
        masks = []
        batch = {k: v[start:start + batch_size] for k, v in windows.inputs.items()}
        model.forward_batch(Tape(), model.params, batch, masks)
        rf_gate, vo_gate = masks[-1]
        rf_means.append(rf_gate.mean(axis=-1))
        vo_means.append(vo_gate.mean(axis=-1))
    return pd.DataFrame({
        "t": windows.t,
        "rf_mask": np.concatenate(rf_means),
        "vo_mask": np.concatenate(vo_means),
    })
