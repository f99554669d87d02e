"""
Anchor selection commands
Brute-force labelling of traces and classifier-chain training
"""
import logging
import os
import time

import pandas as pd

from commands.common import load_traces, output_dir, write_frame, write_manifest
from services.anchor_selector import (
    build_selector_dataset, save_selector, selector_accuracy, split_dataset, train_anchor_selector,
)
from services.errors import ValidationError
from services.evaluation import power_error_correlation
from services.rng import RngStream

logger = logging.getLogger(__name__)


def dataset_to_frame(dataset, ids):
    ranges, powers, labels = dataset
    columns = {}
    for prefix, values in (("range", ranges), ("power", powers), ("label", labels)):
        for j, anchor_id in enumerate(ids):
            columns[f"{prefix}_{anchor_id}"] = values[:, j]
    return pd.DataFrame(columns)


def frame_to_dataset(frame):
    """Inverse of dataset_to_frame; anchor ids come from the column names"""
    ids = sorted(int(c.split("_", 1)[1]) for c in frame.columns if c.startswith("label_"))
    if len(ids) < 3:
        raise ValidationError("label file needs range_/power_/label_ columns for at least 3 anchors",
                              path="labels")
    try:
        ranges = frame[[f"range_{i}" for i in ids]].to_numpy(dtype=float)
        powers = frame[[f"power_{i}" for i in ids]].to_numpy(dtype=float)
        labels = frame[[f"label_{i}" for i in ids]].to_numpy(dtype=int)
    except KeyError as e:
        raise ValidationError(f"missing column {e}", path="labels") from e
    return (ranges, powers, labels), ids


def cmd_label_anchors(args, app_config):
    started = time.perf_counter()
    out = output_dir(args, app_config)
    traces = load_traces(args.trace)
    ids = traces[0].layout.ids
    if any(t.layout.ids != ids for t in traces):
        raise ValidationError("all traces must share the anchor ids", path="trace")
    dataset = build_selector_dataset(traces, args.k)
    path = write_frame(dataset_to_frame(dataset, ids), os.path.join(out, "labels.csv"))
    logger.info(f"Labelled {len(dataset[2])} epochs with the best {args.k} of {len(ids)} anchors")
    write_manifest(out, args, app_config, args.trace, [path], started)


def cmd_train_selector(args, app_config):
    started = time.perf_counter()
    out = output_dir(args, app_config)
    dataset, ids = frame_to_dataset(pd.read_csv(args.labels))
    train, held_out = split_dataset(dataset, 1.0 - args.holdout)
    model = train_anchor_selector(
        train, k=args.k, chain_order=ids, rng=RngStream.named(args.seed, "selector/init"), epochs=args.epochs,
    )
    model_path = os.path.join(out, "selector.json")
    save_selector(model, model_path)
    outputs = [model_path]
    if len(held_out[0]):
        accuracy = selector_accuracy(model, held_out)
        frame = pd.DataFrame({
            "anchor_id": ids,
            "accuracy": accuracy["per_anchor_accuracy"],
        })
        outputs.append(write_frame(frame, os.path.join(out, "selector_accuracy.csv")))
        logger.info(f"Held-out mean accuracy {accuracy['mean_accuracy']:.3f}, "
                    f"exact subset match {accuracy['subset_exact_match']:.3f}")
    if args.trace:
        coefficient, frame = power_error_correlation(load_traces(args.trace), model, model.k)
        outputs.append(write_frame(frame, os.path.join(out, "power_error.csv")))
        logger.info(f"Pearson(min selected power, error) = {coefficient:.3f}")
    write_manifest(out, args, app_config, [args.labels] + list(args.trace or []), outputs, started)


def register_selector_commands(subparsers, app_config):
    """Register anchor-selection subcommands"""

    parser = subparsers.add_parser("label-anchors", help="brute-force best-K anchor labels per epoch")
    parser.add_argument("--trace", nargs="+", required=True)
    parser.add_argument("--k", type=int, default=3)
    parser.add_argument("--out", default=None)
    parser.set_defaults(handler=cmd_label_anchors)

    parser = subparsers.add_parser("train-selector", help="train the classifier-chain anchor selector")
    parser.add_argument("--labels", required=True, help="labels.csv from label-anchors")
    parser.add_argument("--k", type=int, default=3)
    parser.add_argument("--seed", type=int, required=True)
    parser.add_argument("--epochs", type=int, default=2000)
    parser.add_argument("--holdout", type=float, default=0.2, help="chronological held-out fraction")
    parser.add_argument("--trace", nargs="*", default=None, help="traces for the power/error study")
    parser.add_argument("--out", default=None)
    parser.set_defaults(handler=cmd_train_selector)
