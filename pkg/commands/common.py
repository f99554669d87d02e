"""
Helpers shared by the subcommands: output directories, run manifests and
input loading.
"""
import json
import logging
import os
import time

from models import RunManifest
from services.trace_io import read_trace

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TIMING_NAME = "manifest.timing.json"


def output_dir(args, app_config):
    """--out if given, otherwise FUSETRACK_OUTPUT_DIR/<command>; created if missing"""
    out = args.out or os.path.join(app_config["OUTPUT_DIR"], args.command)
    os.makedirs(out, exist_ok=True)
    return out


def manifest_arguments(args):
    skip = {"handler", "command", "out", "jobs"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def write_manifest(out, args, app_config, inputs, outputs, started):
    """
    Write manifest.json (reproducible) and manifest.timing.json (wall time).

    Output paths are recorded relative to the output directory.
    """
    manifest = RunManifest(
        command=args.command,
        config_path=getattr(args, "config", None),
        seed=getattr(args, "seed", None),
        inputs=[str(p) for p in inputs],
        outputs=sorted(os.path.relpath(p, out) for p in outputs),
        tool_version=app_config["VERSION"],
        arguments=manifest_arguments(args),
        wall_time=time.perf_counter() - started,
    )
    with open(os.path.join(out, MANIFEST_NAME), "w", encoding="utf-8") as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(out, TIMING_NAME), "w", encoding="utf-8") as f:
        json.dump({"wall_time": manifest.wall_time}, f, indent=2)
        f.write("\n")
    logger.info(f"{args.command}: wrote {len(outputs)} outputs to {out} in {manifest.wall_time:.2f}s")
    return manifest


def write_json(data, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_frame(frame, path):
    frame.to_csv(path, index=False)
    return path


def load_traces(paths):
    traces = []
    for path in paths:
        traces.append(read_trace(path))
        logger.info(f"Loaded trace {traces[-1].scenario} from {path}")
    return traces


METHODS = ("rf_only", "vo_only", "ekf", "fusion", "blackbox")


def resolve_method(name, app_config, model_path=None, selector_path=None, k=3):
    """
    Callable trace -> estimated Trajectory for a method name.

    Learned methods need a checkpoint stem; rf_only and ekf use the selector
    when one is given.
    """
    from services.anchor_selector import load_selector
    from services.baselines import ekf_fuse, rf_only, vo_only
    from services.errors import ValidationError
    from services.model_store import load_model
    from services.training import predict_trace

    if name not in METHODS:
        raise ValidationError(f"unknown method {name!r}", path="method")
    if name in ("fusion", "blackbox"):
        if not model_path:
            raise ValidationError(f"{name} needs --model", path="model")
        model = load_model(model_path, app_config["FLOAT_MODE"])
        if model.kind != name:
            raise ValidationError(f"checkpoint holds a {model.kind} model, not {name}", path="model")
        return lambda trace: predict_trace(model, trace)
    selector = load_selector(selector_path) if selector_path else None
    if name == "rf_only":
        return lambda trace: rf_only(trace, selector, k)
    if name == "ekf":
        return lambda trace: ekf_fuse(trace, selector=selector, k=k)
    return vo_only
