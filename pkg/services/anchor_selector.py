"""
Classifier-chain anchor selection.

Each link is a logistic regression over all ranges, all powers and the
outputs of the earlier links (true labels while training, predictions at
inference). The chain runs in ascending anchor-id order.
"""
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from services.errors import ValidationError
from services.rf_loc import DEFAULT_K, label_best_anchors

logger = logging.getLogger(__name__)

MODEL_VERSION = "anchor-selector/1"
CONSTANT_LOGIT = 30.0


@dataclass
class AnchorSelectorModel:
    """Fitted chain: one weight vector (bias last) per anchor link"""

    chain_order: list
    k: int
    weights: list
    input_mean: np.ndarray
    input_scale: np.ndarray
    constant_links: list = field(default_factory=list)
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.k < 3:
            raise ValidationError(f"K must be >= 3, got {self.k}", path="K")
        for w in self.weights:
            if not np.all(np.isfinite(w)):
                raise ValidationError("selector weights must be finite")

    @property
    def n_anchors(self):
        return len(self.chain_order)

    def to_dict(self):
        return {
            "version": MODEL_VERSION,
            "chain_order": list(self.chain_order),
            "k": self.k,
            "weights": [w.tolist() for w in self.weights],
            "input_mean": self.input_mean.tolist(),
            "input_scale": self.input_scale.tolist(),
            "constant_links": list(self.constant_links),
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("version") != MODEL_VERSION:
            raise ValidationError(f"unsupported selector version {data.get('version')!r}", path="version")
        return cls(
            chain_order=[int(i) for i in data["chain_order"]],
            k=int(data["k"]),
            weights=[np.array(w, dtype=float) for w in data["weights"]],
            input_mean=np.array(data["input_mean"], dtype=float),
            input_scale=np.array(data["input_scale"], dtype=float),
            constant_links=[int(i) for i in data.get("constant_links", [])],
        )


def save_selector(model, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model.to_dict(), f, indent=2)
    logger.info(f"Saved anchor selector ({model.n_anchors} anchors, K={model.k}) to {path}")


def load_selector(path):
    with open(path, "r", encoding="utf-8") as f:
        return AnchorSelectorModel.from_dict(json.load(f))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _log_loss(p, y):
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _fit_link(x, y, rng, epochs, lr):
    """Full-batch gradient descent on mean log-loss; returns (weights, losses)"""
    design = np.hstack([x, np.ones((len(x), 1))])
    # 4 / lambda_max keeps the step below 2 / L for the log-loss Hessian bound
    lam_max = float(np.linalg.eigvalsh(design.T @ design / len(design))[-1])
    step = min(lr, 4.0 / lam_max)
    w = rng.normal_array(design.shape[1], sigma=0.01)
    losses = []
    for _ in range(epochs):
        p = _sigmoid(design @ w)
        losses.append(_log_loss(p, y))
        w = w - step * design.T @ (p - y) / len(design)
    losses.append(_log_loss(_sigmoid(design @ w), y))
    return w, losses


def _chain_permutation(chain_order):
    ordered = sorted(chain_order)
    return [ordered.index(anchor_id) for anchor_id in chain_order]


def _selector_inputs(ranges, powers):
    return np.hstack([np.asarray(ranges, dtype=float), np.asarray(powers, dtype=float)])


def train_anchor_selector(dataset, k=DEFAULT_K, chain_order=None, rng=None, epochs=2000, lr=1.0):
    """
    Fit a classifier chain predicting the best-anchor binary vector.

    Args:
        dataset (tuple): (ranges [N, n], powers [N, n], labels [N, n]) arrays
        k (int): anchors to select at inference
        chain_order (list): anchor ids in chain order (ascending ids by default)
        rng (RngStream): weight initialization stream
        epochs (int): gradient-descent epochs per link
        lr (float): step-size cap

    Returns:
        AnchorSelectorModel: fitted chain
    """
    ranges, powers, labels = (np.asarray(a, dtype=float) for a in dataset)
    if len(ranges) == 0:
        raise ValidationError("selector dataset is empty", path="dataset")
    n = ranges.shape[1]
    if powers.shape != ranges.shape or labels.shape != ranges.shape:
        raise ValidationError(
            f"inconsistent dataset shapes {ranges.shape}, {powers.shape}, {labels.shape}", path="dataset"
        )
    if chain_order is None:
        chain_order = list(range(n))
    if len(chain_order) != n or len(set(chain_order)) != n:
        raise ValidationError(f"chain order {chain_order} is not a permutation of {n} anchor ids",
                              path="chain_order")
    # dataset columns are in ascending anchor-id order; links run in chain order
    perm = _chain_permutation(chain_order)
    ranges, powers, labels = ranges[:, perm], powers[:, perm], labels[:, perm]
    if rng is None:
        from services.rng import RngStream
        rng = RngStream.named(0, "rf_loc/selector")

    raw = _selector_inputs(ranges, powers)
    mean = raw.mean(axis=0)
    scale = raw.std(axis=0)
    scale[scale == 0] = 1.0
    x = (raw - mean) / scale

    weights, constant_links, history = [], [], []
    for link in range(n):
        inputs = np.hstack([x, labels[:, :link]])
        y = labels[:, link]
        if np.all(y == y[0]):
            logger.warning(
                f"Selector link for anchor {chain_order[link]} sees a single class; using a constant predictor"
            )
            w = np.zeros(inputs.shape[1] + 1)
            w[-1] = CONSTANT_LOGIT if y[0] == 1 else -CONSTANT_LOGIT
            constant_links.append(chain_order[link])
            history.append([_log_loss(_sigmoid(np.full(len(y), w[-1])), y)])
        else:
            w, losses = _fit_link(inputs, y, rng, epochs, lr)
            history.append(losses)
            logger.debug(f"Link {link}: log-loss {losses[0]:.4f} -> {losses[-1]:.4f}")
        weights.append(w)

    logger.info(f"Trained anchor selector on {len(x)} epochs, {n} anchors, K={k}")
    return AnchorSelectorModel(
        chain_order=[int(i) for i in chain_order], k=k, weights=weights,
        input_mean=mean, input_scale=scale, constant_links=constant_links, history=history,
    )


def chain_scores(model, ranges, powers):
    """
    Per-anchor probabilities for a batch.

    Returns:
        tuple: (scores [N, n], binary predictions [N, n]) in chain order
    """
    raw = np.atleast_2d(_selector_inputs(np.atleast_2d(ranges), np.atleast_2d(powers)))
    x = (raw - model.input_mean) / model.input_scale
    scores = np.zeros((len(x), model.n_anchors))
    predictions = np.zeros((len(x), model.n_anchors))
    for link, w in enumerate(model.weights):
        design = np.hstack([x, predictions[:, :link], np.ones((len(x), 1))])
        scores[:, link] = _sigmoid(design @ w)
        predictions[:, link] = (scores[:, link] >= 0.5).astype(float)
    return scores, predictions.astype(int)


def select_anchors(model, sample):
    """
    Top-K anchors by chain score; equal scores resolve to lower ids.

    Returns:
        set: K anchor ids
    """
    ids = [e.anchor_id for e in sample.entries]
    if sorted(ids) != sorted(model.chain_order):
        raise ValidationError(f"sample anchors {ids} do not match selector anchors {model.chain_order}")
    ranges = [sample.entry(i).range for i in model.chain_order]
    powers = [sample.entry(i).power for i in model.chain_order]
    scores, _ = chain_scores(model, ranges, powers)
    ranked = sorted(zip(model.chain_order, scores[0]), key=lambda item: (-item[1], item[0]))
    return {anchor_id for anchor_id, _ in ranked[:model.k]}


def selector_accuracy(model, dataset):
    """
    Held-out accuracy of the chain's binary predictions.

    Returns:
        dict: per_anchor_accuracy (list), mean_accuracy, subset_exact_match
    """
    ranges, powers, labels = (np.asarray(a, dtype=float) for a in dataset)
    perm = _chain_permutation(model.chain_order)
    _, predictions = chain_scores(model, ranges[:, perm], powers[:, perm])
    hits = predictions == labels[:, perm].astype(int)
    # report per anchor in ascending id order
    per_anchor = np.empty(model.n_anchors)
    per_anchor[perm] = hits.mean(axis=0)
    return {
        "per_anchor_accuracy": per_anchor.tolist(),
        "mean_accuracy": float(hits.mean()),
        "subset_exact_match": float(np.all(hits, axis=1).mean()),
    }


def build_selector_dataset(traces, k=DEFAULT_K):
    """
    Label every epoch of every trace with its brute-force best K-subset.

    Returns:
        tuple: (ranges [N, n], powers [N, n], labels [N, n]) in anchor-id order
    """
    ranges, powers, labels = [], [], []
    for trace in traces:
        for gt, sample in zip(trace.gt.samples, trace.rf):
            labels.append(label_best_anchors(sample, trace.layout, gt.value, k))
            ranges.append(sample.ranges())
            powers.append(sample.powers())
        logger.info(f"Labelled {len(trace.rf)} epochs of {trace.scenario}")
    if not labels:
        raise ValidationError("no epochs to label", path="traces")
    return np.array(ranges), np.array(powers), np.array(labels)


def split_dataset(dataset, fraction):
    """Chronological split into (first fraction, rest)"""
    cut = int(math.floor(len(dataset[0]) * fraction))
    return tuple(a[:cut] for a in dataset), tuple(a[cut:] for a in dataset)
