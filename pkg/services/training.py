"""
Shared machinery for the sequence models: sliding windows, chronological
splits, feature normalization, the base model class and the Adam training
loop with best-validation checkpointing.
"""
import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np
import pandas as pd

from services.autodiff import Tape, backward
from services.errors import NumericalError, ValidationError
from services.nn import AdamState, adam_step, count_parameters
from services.rng import RngStream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Training regime shared by the fusion and blackbox models"""

    window: int = 8
    batch_size: int = 32
    learning_rate: float = 3e-3
    epochs: int = 40
    split: tuple = (0.7, 0.1, 0.2)
    seed: int = 0
    train_fraction: float = 1.0
    k: int = 3
    no_cross_attention: bool = False
    no_anchor_selection: bool = False
    swap_attention: bool = False
    scale_features: bool = False
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "split", tuple(float(s) for s in self.split))
        if len(self.split) != 3 or any(s < 0 for s in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValidationError(f"split fractions must be three non-negatives summing to 1, got {self.split}",
                                  path="train.split")
        if self.window < 2:
            raise ValidationError(f"window must be >= 2, got {self.window}", path="train.window")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be >= 1", path="train")
        if not 0 < self.train_fraction <= 1:
            raise ValidationError(f"train_fraction must be in (0, 1], got {self.train_fraction}",
                                  path="train.train_fraction")

    @classmethod
    def from_dict(cls, data, path="train"):
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ValidationError("unknown key", path=f"{path}.{key}")
        values = dict(data)
        if "split" in values:
            values["split"] = tuple(values["split"])
        return cls(**values)

    def to_dict(self):
        return {f.name: (list(getattr(self, f.name)) if f.name == "split" else getattr(self, f.name))
                for f in fields(self)}


@dataclass
class WindowSet:
    """N windows of L epochs; inputs[key] is [N, L, d], target is [N, 2]"""

    inputs: dict
    target: np.ndarray
    t: np.ndarray

    def __len__(self):
        return len(self.target)

    def subset(self, index):
        return WindowSet({k: v[index] for k, v in self.inputs.items()}, self.target[index], self.t[index])

    @classmethod
    def concat(cls, sets, keys):
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty(keys)
        return cls({k: np.concatenate([s.inputs[k] for s in sets]) for k in keys},
                   np.concatenate([s.target for s in sets]),
                   np.concatenate([s.t for s in sets]))

    @classmethod
    def empty(cls, keys):
        return cls({k: np.zeros((0, 0, 0)) for k in keys}, np.zeros((0, 2)), np.zeros(0))


def make_windows(features, keys, window):
    """
    Sliding windows ending at every epoch from index L-1 on.

    Returns:
        WindowSet: targets are ground truth at each window's last epoch
    """
    count = len(features) - window + 1
    if count < 1:
        raise ValidationError(f"trace has {len(features)} epochs, need more than window {window}",
                              path="trace")
    index = np.arange(count)[:, None] + np.arange(window)[None, :]
    inputs = {key: features.inputs(key)[index] for key in keys}
    last = index[:, -1]
    return WindowSet(inputs, features.gt[last], features.t[last])


def split_windows(windows, split):
    """Chronological train / validation / test blocks, no shuffling"""
    n = len(windows)
    n_train = int(math.floor(n * split[0]))
    n_val = int(math.floor(n * split[1]))
    train = windows.subset(np.arange(0, n_train))
    val = windows.subset(np.arange(n_train, n_train + n_val))
    test = windows.subset(np.arange(n_train + n_val, n))
    return train, val, test


def normalize_features(train_rows, *other_rows, scale=False):
    """
    Subtract per-feature means computed on the training rows only.

    Args:
        train_rows (numpy.ndarray): [N, d] training epochs
        other_rows: further [M, d] arrays normalized with the training stats
        scale (bool): also divide by the training standard deviation (off by
            default: features are only mean-centred)

    Returns:
        tuple: (normalized train, list of normalized others, means, scales)
    """
    train_rows = np.asarray(train_rows, dtype=float)
    if train_rows.size == 0 or len(train_rows) == 0:
        raise ValidationError("training split is empty", path="dataset")
    means = train_rows.mean(axis=0)
    scales = train_rows.std(axis=0) if scale else np.ones(train_rows.shape[1])
    scales = np.where(scales > 1e-12, scales, 1.0)
    normalized = [(np.asarray(rows, dtype=float) - means) / scales for rows in other_rows]
    return (train_rows - means) / scales, normalized, means, scales


class SequenceModel:
    """
    Base for window-to-position models. Subclasses define `kind`,
    `input_keys` and `network(tape, params, inputs, masks)` returning [B, 2]
    on normalized, channel-first inputs.
    """

    kind = None
    input_keys = ()
    config_class = None

    def __init__(self, config, params, stats=None, selector=None, k=3,
                 no_cross_attention=False, no_anchor_selection=False):
        self.config = config
        self.params = params
        self.stats = stats or {}
        self.selector = selector
        self.k = k
        self.no_cross_attention = no_cross_attention
        self.no_anchor_selection = no_anchor_selection

    @property
    def window(self):
        return self.config.window

    @property
    def all_anchors(self):
        """Models without composed RF features, or the unfiltered ablation, use every anchor"""
        return self.no_anchor_selection or "rf" not in self.input_keys

    def windows_for(self, trace):
        from services.features import build_epoch_features

        selector = None if self.all_anchors else self.selector
        features = build_epoch_features(trace, selector, self.k, all_anchors=self.all_anchors)
        return make_windows(features, self.input_keys, self.window)

    def parameter_count(self):
        return count_parameters(self.params)

    def fit_stats(self, train, scale=False):
        """Normalization constants from the last epoch of every training window"""
        stats = {}
        for key in self.input_keys:
            _, _, means, scales = normalize_features(train.inputs[key][:, -1, :], scale=scale)
            stats[key] = (means, scales)
        stats["target_mean"] = train.target.mean(axis=0)
        self.stats = stats

    def forward_batch(self, tape, params, inputs, masks=None):
        # inputs and constants follow the parameter dtype (float32 inference)
        dtype = next(iter(params.values())).data.dtype
        normalized = {}
        for key in self.input_keys:
            means, scales = self.stats[key]
            rows = ((inputs[key] - means) / scales).astype(dtype, copy=False)
            normalized[key] = tape.constant(np.transpose(rows, (0, 2, 1)))
        out = self.network(tape, params, normalized, masks)
        return tape.add(out, tape.constant(self.stats["target_mean"].astype(dtype, copy=False)))

    def predict_windows(self, windows, batch_size=256, masks=None):
        predictions = []
        for start in range(0, len(windows), batch_size):
            batch = {k: v[start:start + batch_size] for k, v in windows.inputs.items()}
            predictions.append(self.forward_batch(Tape(), self.params, batch, masks).data)
        if not predictions:
            return np.zeros((0, 2))
        return np.concatenate(predictions)

    def network(self, tape, params, inputs, masks):
        raise NotImplementedError


def squared_error_loss(tape, prediction, target):
    """Mean over the batch of the squared Euclidean position error"""
    diff = tape.sub(prediction, tape.constant(target))
    return tape.scale(tape.sum(tape.mul(diff, diff)), 1.0 / len(target))


def _window_loss(model, params, windows, batch_size=256):
    if len(windows) == 0:
        return math.nan
    total = 0.0
    for start in range(0, len(windows), batch_size):
        batch = windows.subset(np.arange(start, min(start + batch_size, len(windows))))
        tape = Tape()
        pred = model.forward_batch(tape, params, batch.inputs)
        total += float(squared_error_loss(tape, pred, batch.target).data) * len(batch)
    return total / len(windows)


def fit(model, train, val, config, rng=None):
    """
    Adam on mean squared position error with best-validation checkpointing.

    Args:
        model (SequenceModel): initialized model; params replaced by the best
        train (WindowSet): training windows
        val (WindowSet): validation windows (training loss is used when empty)
        config (TrainConfig): learning rate, epochs, batch size, seed
        rng (RngStream): shuffling stream

    Returns:
        pandas.DataFrame: per-epoch log with columns epoch, train_loss, val_loss
    """
    if len(train) == 0:
        raise ValidationError("no training windows", path="train")
    rng = rng or RngStream.named(config.seed, f"{model.kind}/shuffle")
    state = AdamState(lr=config.learning_rate)
    params = model.params
    best_loss, best_params = math.inf, params
    rows = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(train), config.batch_size):
            batch = train.subset(order[start:start + config.batch_size])
            tape = Tape()
            pred = model.forward_batch(tape, params, batch.inputs)
            loss = squared_error_loss(tape, pred, batch.target)
            loss_value = float(loss.data)
            if not math.isfinite(loss_value):
                raise NumericalError(f"non-finite training loss in {model.kind}", epoch=epoch)
            grads = backward(tape, loss).for_params(params)
            params = adam_step(params, grads, state)
            total += loss_value * len(batch)
        train_loss = total / len(train)
        val_loss = _window_loss(model, params, val) if len(val) else train_loss
        rows.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        logger.info(f"{model.kind} epoch {epoch}/{config.epochs}: train={train_loss:.5f} val={val_loss:.5f}")
        if val_loss < best_loss:
            best_loss, best_params = val_loss, params
    model.params = best_params
    logger.info(f"Best {model.kind} validation loss {best_loss:.5f}")
    return pd.DataFrame(rows, columns=["epoch", "train_loss", "val_loss"])


@dataclass
class Splits:
    train: WindowSet
    val: WindowSet
    test: WindowSet


def prepare_splits(traces, keys, config, selector=None):
    """
    Features, windows and chronological splits for every trace, concatenated.

    Raises:
        ValidationError: when there are no traces or too few windows to train on
    """
    from services.features import build_epoch_features

    if not traces:
        raise ValidationError("need at least one trace", path="traces")
    parts = []
    all_anchors = config.no_anchor_selection or "rf" not in keys
    for trace in traces:
        features = build_epoch_features(
            trace, None if all_anchors else selector, config.k, all_anchors=all_anchors
        )
        parts.append(split_windows(make_windows(features, keys, config.window), config.split))
    splits = Splits(*(WindowSet.concat([p[i] for p in parts], keys) for i in range(3)))
    if len(splits.train) < 1:
        raise ValidationError(
            f"insufficient windows for the split {config.split}: no training windows", path="traces"
        )
    logger.info(f"Windows: {len(splits.train)} train, {len(splits.val)} val, {len(splits.test)} test")
    return splits


def subsample_training(train, fraction, rng):
    """Keep a deterministic random fraction of the training windows"""
    if fraction >= 1.0:
        return train
    keep = max(1, int(round(len(train) * fraction)))
    index = np.sort(rng.permutation(len(train))[:keep])
    logger.info(f"Training on {keep} of {len(train)} windows (fraction {fraction})")
    return train.subset(index)


@dataclass
class TrainResult:
    model: SequenceModel
    log: pd.DataFrame
    test: WindowSet


def train_sequence_model(model_cls, traces, config=None, selector=None):
    """
    Window, split, normalize and fit one model kind.

    Args:
        model_cls (type): SequenceModel subclass with `config_class` and `initialize`
        traces (list): simulated traces
        config (TrainConfig): training regime and ablation flags
        selector (AnchorSelectorModel): anchor selection for composed RF features

    Returns:
        TrainResult: best-validation model, per-epoch log, held-out test windows
    """
    config = config or TrainConfig()
    splits = prepare_splits(traces, model_cls.input_keys, config, selector)
    rf_key = model_cls.input_keys[0]
    arch = model_cls.config_class(**{
        **config.model,
        "rf_dim": splits.train.inputs[rf_key].shape[-1],
        "window": config.window,
        "swap_attention": config.swap_attention,
    })
    model = model_cls.initialize(
        arch, RngStream.named(config.seed, f"{model_cls.kind}/init"),
        selector=None if config.no_anchor_selection else selector, k=config.k,
        no_cross_attention=config.no_cross_attention, no_anchor_selection=config.no_anchor_selection,
    )
    train = subsample_training(splits.train, config.train_fraction,
                               RngStream.named(config.seed, f"{model_cls.kind}/subsample"))
    model.fit_stats(train, scale=config.scale_features)
    logger.info(f"Training {model.kind} model with {model.parameter_count()} parameters")
    log = fit(model, train, splits.val, config, RngStream.named(config.seed, f"{model_cls.kind}/shuffle"))
    return TrainResult(model, log, splits.test)


def predict_trace(model, trace):
    """
    Roll a model over a whole trace.

    Returns:
        Trajectory: one position per epoch from index L-1, RF timestamps
    """
    from models import Trajectory

    if len(trace) < model.window:
        raise ValidationError(f"trace has {len(trace)} epochs, window needs {model.window}", path="trace")
    windows = model.windows_for(trace)
    return Trajectory.from_arrays(windows.t, model.predict_windows(windows))


def load_train_config(path):
    """Read the [train] table of a TOML file into a TrainConfig"""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib

    with open(path, "rb") as f:
        try:
            data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ValidationError(f"invalid TOML: {e}", path=str(path)) from e
    unknown = set(data) - {"train"}
    if unknown:
        raise ValidationError("unknown section", path=sorted(unknown)[0])
    return TrainConfig.from_dict(data.get("train", {}))
