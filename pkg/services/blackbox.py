"""
Pure-learning baseline: deep per-sensor encoders over the raw streams (all
anchor ranges and powers, raw VO polar steps and keypoint counts), a
self-attention mask per sensor, then the same cross-attention, LSTM and FC
pipeline as the fusion model. No multilateration, no anchor selection.
"""
import logging
from dataclasses import dataclass, asdict

from services.errors import ValidationError
from services.fusion import attention_mask, cross_attention, fuse
from services.nn import init_conv, init_dense, init_lstm, lstm_stack
from services.training import SequenceModel, predict_trace, train_sequence_model

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BlackboxConfig:
    rf_dim: int = 10
    vo_dim: int = 3
    channels: tuple = (64, 128, 128)
    dense: tuple = (256, 128)
    kernel: int = 3
    hidden: int = 256
    layers: int = 2
    fc_hidden: int = 128
    window: int = 8
    swap_attention: bool = False

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "dense", tuple(int(d) for d in self.dense))
        if not self.channels or not self.dense:
            raise ValidationError("blackbox encoders need conv and dense layers", path="model")

    def to_dict(self):
        data = asdict(self)
        data["channels"] = list(self.channels)
        data["dense"] = list(self.dense)
        return data


def init_blackbox_params(config, rng):
    params = {}
    width = config.dense[-1]
    for prefix, dim in (("rf", config.rf_dim), ("vo", config.vo_dim)):
        c_in = dim
        for layer, c_out in enumerate(config.channels):
            init_conv(params, rng, f"{prefix}.conv{layer}", c_in, c_out, config.kernel)
            c_in = c_out
        for layer, n_out in enumerate(config.dense):
            init_dense(params, rng, f"{prefix}.dense{layer}", c_in, n_out)
            c_in = n_out
        for name in ("W1", "W2"):
            init_dense(params, rng, f"self.{prefix}.{name}", width, width)
            del params[f"self.{prefix}.{name}.b"]
            params[f"self.{prefix}.{name}"] = params.pop(f"self.{prefix}.{name}.W")
    for name in ("vo_W1", "vo_W2", "rf_W1", "rf_W2"):
        init_dense(params, rng, f"attn.{name}", width, width)
        del params[f"attn.{name}.b"]
        params[f"attn.{name}"] = params.pop(f"attn.{name}.W")
    init_lstm(params, rng, "lstm0", 2 * width, config.hidden)
    for layer in range(1, config.layers):
        init_lstm(params, rng, f"lstm{layer}", config.hidden, config.hidden)
    init_dense(params, rng, "fc0", config.hidden, config.fc_hidden)
    init_dense(params, rng, "fc1", config.fc_hidden, 2)
    return params


def self_attention(tape, features, params, prefix):
    """Gate a sensor's features with a mask computed from themselves; returns (gated, mask)"""
    mask = attention_mask(tape, features, params[f"self.{prefix}.W1"], params[f"self.{prefix}.W2"])
    return tape.mul(mask, features), mask


class BlackboxModel(SequenceModel):
    kind = "blackbox"
    input_keys = ("raw_rf", "vo")
    config_class = BlackboxConfig

    @classmethod
    def initialize(cls, config, rng, **kwargs):
        return cls(config, init_blackbox_params(config, rng), **kwargs)

    def _encode(self, tape, params, prefix, x):
        for layer in range(len(self.config.channels)):
            x = tape.relu(tape.conv1d(x, params[f"{prefix}.conv{layer}.K"], params[f"{prefix}.conv{layer}.b"]))
        steps = []
        for step in range(self.window):
            h = tape.take(x, step, axis=2)
            for layer in range(len(self.config.dense)):
                h = tape.relu(tape.dense(h, params[f"{prefix}.dense{layer}.W"], params[f"{prefix}.dense{layer}.b"]))
            steps.append(h)
        return steps

    def network(self, tape, params, inputs, masks=None):
        rf_steps = self._encode(tape, params, "rf", inputs["raw_rf"])
        vo_steps = self._encode(tape, params, "vo", inputs["vo"])
        sequence = []
        for f_r, f_v in zip(rf_steps, vo_steps):
            f_r, _ = self_attention(tape, f_r, params, "rf")
            f_v, _ = self_attention(tape, f_v, params, "vo")
            if self.no_cross_attention:
                sequence.append(tape.concat([f_v, f_r]))
                continue
            vo_gate, rf_gate = cross_attention(tape, f_r, f_v, params, self.config.swap_attention)
            if masks is not None:
                masks.append((rf_gate.data, vo_gate.data))
            sequence.append(fuse(tape, f_r, f_v, (vo_gate, rf_gate)))
        h = lstm_stack(tape, sequence, params, "lstm", self.config.layers)
        hidden = tape.relu(tape.dense(h, params["fc0.W"], params["fc0.b"]))
        return tape.dense(hidden, params["fc1.W"], params["fc1.b"])


def train_blackbox(traces, config=None):
    """Same regime as train_fusion on the raw streams; needs no anchor selector"""
    return train_sequence_model(BlackboxModel, traces, config)


def predict_blackbox(model, trace):
    return predict_trace(model, trace)
