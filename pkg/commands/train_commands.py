"""
Training commands
Fusion / blackbox model training and the ablation study
"""
import logging
import os
import time
from dataclasses import replace

from commands.common import load_traces, output_dir, write_frame, write_json, write_manifest
from services.anchor_selector import load_selector
from services.blackbox import train_blackbox
from services.errors import ValidationError
from services.evaluation import compare_report, window_ate
from services.fusion import train_fusion
from services.model_store import save_model
from services.training import TrainConfig, load_train_config

logger = logging.getLogger(__name__)

ABLATIONS = {
    "no-attention": {"no_cross_attention": True},
    "no-anchor-selection": {"no_anchor_selection": True},
}


def build_train_config(args):
    """TOML [train] table, then command-line overrides"""
    config = load_train_config(args.config) if args.config else TrainConfig()
    overrides = {"seed": args.seed}
    if getattr(args, "train_fraction", None) is not None:
        overrides["train_fraction"] = args.train_fraction
    for name in getattr(args, "ablate", None) or []:
        overrides.update(ABLATIONS[name])
    return replace(config, **overrides)


def train_model(kind, traces, config, selector):
    if kind == "fusion":
        if selector is None and not config.no_anchor_selection:
            raise ValidationError("fusion training needs --selector unless anchor selection is ablated",
                                  path="selector")
        return train_fusion(traces, config, selector)
    return train_blackbox(traces, config)


def cmd_train(args, app_config):
    started = time.perf_counter()
    out = output_dir(args, app_config)
    config = build_train_config(args)
    traces = load_traces(args.traces)
    selector = load_selector(args.selector) if args.selector else None
    result = train_model(args.kind, traces, config, selector)

    outputs = save_model(result.model, os.path.join(out, "model"))
    outputs.append(write_frame(result.log, os.path.join(out, "train_log.csv")))
    if len(result.test):
        summary = window_ate(result.model, result.test)
        outputs.append(write_json({"test_windows": summary.stats(), "train_config": config.to_dict()},
                                  os.path.join(out, "train_summary.json")))
        logger.info(f"{args.kind}: held-out median error {summary.median:.3f} m over {summary.count} windows")
    inputs = list(args.traces) + [p for p in (args.config, args.selector) if p]
    write_manifest(out, args, app_config, inputs, outputs, started)


def cmd_ablate(args, app_config):
    """Train the full fusion model and each ablated variant on the same data"""
    started = time.perf_counter()
    out = output_dir(args, app_config)
    base = build_train_config(args)
    traces = load_traces(args.traces)
    selector = load_selector(args.selector) if args.selector else None
    variants = {"full": {}, **ABLATIONS}
    results, outputs = {}, []
    for name, flags in variants.items():
        logger.info(f"Ablation variant {name}")
        result = train_model("fusion", traces, replace(base, **flags), selector)
        results[name] = window_ate(result.model, result.test)
        outputs.append(write_frame(result.log, os.path.join(out, f"train_log_{name}.csv")))
    table, text = compare_report(results)
    outputs.append(write_frame(table, os.path.join(out, "ablation.csv")))
    logger.info(f"Ablation results:\n{text}")
    inputs = list(args.traces) + [p for p in (args.config, args.selector) if p]
    write_manifest(out, args, app_config, inputs, outputs, started)


def register_train_commands(subparsers, app_config):
    """Register training subcommands"""

    parser = subparsers.add_parser("train", help="train a fusion or blackbox model")
    parser.add_argument("--kind", choices=("fusion", "blackbox"), default="fusion")
    parser.add_argument("--traces", nargs="+", required=True)
    parser.add_argument("--config", default=None, help="TOML file with a [train] table")
    parser.add_argument("--selector", default=None, help="anchor selector JSON")
    parser.add_argument("--seed", type=int, required=True)
    parser.add_argument("--train-fraction", dest="train_fraction", type=float, default=None)
    parser.add_argument("--ablate", action="append", choices=sorted(ABLATIONS), default=None)
    parser.add_argument("--out", default=None)
    parser.set_defaults(handler=cmd_train)

    parser = subparsers.add_parser("ablate", help="full fusion vs. each ablated variant")
    parser.add_argument("--traces", nargs="+", required=True)
    parser.add_argument("--config", default=None)
    parser.add_argument("--selector", default=None)
    parser.add_argument("--seed", type=int, required=True)
    parser.add_argument("--out", default=None)
    parser.set_defaults(handler=cmd_ablate)
