"""
Model checkpoints: `<path>.tensors` holds the named parameters, `<path>.json`
the sidecar with kind, architecture, normalization constants, ablation flags
and the embedded anchor selector.
"""
import logging
import os

import numpy as np

from services.anchor_selector import AnchorSelectorModel
from services.autodiff import Tensor
from services.blackbox import BlackboxConfig, BlackboxModel
from services.checkpoint import HEADER_BYTES, read_sidecar, read_tensors, write_sidecar, write_tensors
from services.errors import ValidationError
from services.fusion import FusionConfig, FusionModel
from services.rng import RngStream

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = "sequence-model/1"
MODEL_KINDS = {
    FusionModel.kind: (FusionModel, FusionConfig),
    BlackboxModel.kind: (BlackboxModel, BlackboxConfig),
}
FLOAT_MODES = {"float64": np.float64, "float32": np.float32}


def checkpoint_paths(path):
    path = str(path)
    return f"{path}.tensors", f"{path}.json"


def _stats_to_dict(stats):
    data = {"target_mean": [float(v) for v in stats["target_mean"]]}
    for key, value in stats.items():
        if key == "target_mean":
            continue
        means, scales = value
        data[key] = {"mean": [float(v) for v in means], "scale": [float(v) for v in scales]}
    return data


def _stats_from_dict(data):
    stats = {"target_mean": np.array(data["target_mean"], dtype=float)}
    for key, value in data.items():
        if key != "target_mean":
            stats[key] = (np.array(value["mean"], dtype=float), np.array(value["scale"], dtype=float))
    return stats


def save_model(model, path):
    """
    Args:
        model (SequenceModel): fusion or blackbox model with fitted stats
        path (str): checkpoint stem; `.tensors` and `.json` are appended

    Returns:
        list: the two files written
    """
    tensors_path, sidecar_path = checkpoint_paths(path)
    write_tensors(model.params, tensors_path)
    write_sidecar({
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "config": model.config.to_dict(),
        "stats": _stats_to_dict(model.stats),
        "k": model.k,
        "no_cross_attention": model.no_cross_attention,
        "no_anchor_selection": model.no_anchor_selection,
        "selector": model.selector.to_dict() if model.selector is not None else None,
        "parameter_count": model.parameter_count(),
    }, sidecar_path)
    logger.info(f"Saved {model.kind} model ({model.parameter_count()} parameters) to {tensors_path}")
    return [tensors_path, sidecar_path]


def load_model(path, float_mode="float64"):
    """
    Read a checkpoint written by save_model.

    Args:
        path (str): checkpoint stem
        float_mode (str): "float64", or "float32" for faster inference

    Raises:
        OSError: missing files
        ValidationError: unknown kind, version or parameter set
    """
    if float_mode not in FLOAT_MODES:
        raise ValidationError(f"unknown float mode {float_mode!r}", path="FUSETRACK_FLOAT_MODE")
    tensors_path, sidecar_path = checkpoint_paths(path)
    sidecar = read_sidecar(sidecar_path)
    if sidecar.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {sidecar.get('version')!r}", path=sidecar_path)
    kind = sidecar.get("kind")
    if kind not in MODEL_KINDS:
        raise ValidationError(f"unknown model kind {kind!r}", path=f"{sidecar_path}:kind")
    model_cls, config_cls = MODEL_KINDS[kind]
    config = config_cls(**sidecar["config"])
    params = read_tensors(tensors_path)
    reference = model_cls.initialize(config, RngStream.named(0, "checkpoint/shapes")).params
    if {n: t.shape for n, t in reference.items()} != {n: t.shape for n, t in params.items()}:
        raise ValidationError("checkpoint parameters do not match the architecture", path=tensors_path)
    dtype = FLOAT_MODES[float_mode]
    if dtype is not np.float64:
        params = {name: Tensor(t.data.astype(dtype), requires_grad=True, name=name) for name, t in params.items()}
    selector = AnchorSelectorModel.from_dict(sidecar["selector"]) if sidecar.get("selector") else None
    return model_cls(
        config, params, stats=_stats_from_dict(sidecar["stats"]), selector=selector, k=sidecar["k"],
        no_cross_attention=sidecar["no_cross_attention"], no_anchor_selection=sidecar["no_anchor_selection"],
    )


def model_size(model):
    """Parameter count and the size of the tensor container in bytes"""
    size = HEADER_BYTES + sum(2 + len(name.encode("utf-8")) + 1 + 4 * len(t.shape) + 8 * t.size
                              for name, t in model.params.items())
    return {"kind": model.kind, "parameters": model.parameter_count(), "bytes": size}


def checkpoint_exists(path):
    return all(os.path.exists(p) for p in checkpoint_paths(path))
