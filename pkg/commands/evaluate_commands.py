"""
Evaluation commands
Per-method trajectories and errors, comparison tables, gradient checks and benchmarks
"""
import logging
import os
import time

import pandas as pd

from commands.common import (
    METHODS, load_traces, output_dir, resolve_method, write_frame, write_json, write_manifest,
)
from services.errors import ValidationError
from services.evaluation import (
    AteSummary, ate, cdf, compare_report, latency_report, read_compare_csv, write_compare_csv,
)
from services.features import build_epoch_features
from services.fusion import attention_report
from services.gradcheck_suite import assert_gradients, run_gradcheck
from services.model_store import load_model, model_size
from services.rf_loc import localize_epoch
from services.training import predict_trace

logger = logging.getLogger(__name__)

ERRORS_SUFFIX = "_errors.csv"


def trajectory_frame(trajectory):
    xy = trajectory.xy()
    return pd.DataFrame({"t": trajectory.times(), "x": xy[:, 0], "y": xy[:, 1]})


def cmd_evaluate(args, app_config):
    started = time.perf_counter()
    out = output_dir(args, app_config)
    (trace,) = load_traces([args.trace])
    method = resolve_method(args.method, app_config, args.model, args.selector, args.k)
    estimate = method(trace)
    summary = ate(estimate, trace.gt)
    name = args.method
    outputs = [
        write_frame(trajectory_frame(estimate), os.path.join(out, f"{name}_trajectory.csv")),
        write_frame(summary.to_frame(), os.path.join(out, f"{name}{ERRORS_SUFFIX}")),
        write_frame(cdf(summary.errors), os.path.join(out, f"{name}_cdf.csv")),
        write_json(summary.stats(), os.path.join(out, f"{name}_summary.json")),
    ]
    if args.attention:
        if args.method != "fusion":
            raise ValidationError("--attention is only available for the fusion model", path="attention")
        model = load_model(args.model, app_config["FLOAT_MODE"])
        outputs.append(write_frame(attention_report(model, trace), os.path.join(out, "attention.csv")))
    logger.info(f"{name} on {trace.scenario}: median ATE {summary.median:.3f} m, max {summary.max:.3f} m")
    inputs = [args.trace] + [p for p in (args.model, args.selector) if p]
    write_manifest(out, args, app_config, inputs, outputs, started)


def method_name(path):
    base = os.path.basename(path)
    if base.endswith(ERRORS_SUFFIX):
        return base[:-len(ERRORS_SUFFIX)]
    return os.path.splitext(base)[0]


def cmd_compare(args, app_config):
    """Comparison table from per-point error files written by evaluate"""
    started = time.perf_counter()
    out = output_dir(args, app_config)
    results = {}
    for path in args.results:
        frame = pd.read_csv(path, float_precision="round_trip")
        if "error_m" not in frame.columns or frame.empty:
            raise ValidationError("expected a non-empty error_m column", path=path)
        name = method_name(path)
        if name in results:
            raise ValidationError(f"duplicate method {name!r}", path=path)
        results[name] = AteSummary.from_errors(frame["t"], frame["error_m"])
    table, text = compare_report(results)
    path = os.path.join(out, "compare.csv")
    write_compare_csv(table, path)
    if not read_compare_csv(path).equals(table):
        logger.warning("compare.csv does not read back identically")
    logger.info(f"Comparison:\n{text}")
    write_manifest(out, args, app_config, args.results, [path], started)


def cmd_gradcheck(args, app_config):
    started = time.perf_counter()
    report = run_gradcheck(seed=args.seed)
    outputs = []
    if args.out:
        out = output_dir(args, app_config)
        outputs.append(write_frame(report, os.path.join(out, "gradcheck.csv")))
        write_manifest(out, args, app_config, [], outputs, started)
    for row in report.itertuples():
        logger.info(f"{row.block:>16}: {row.max_rel_error:.2e} {'ok' if row.passed else 'FAILED'}")
    assert_gradients(report)


def cmd_benchmark(args, app_config):
    """Per-epoch latency of each pipeline stage plus the model footprint"""
    started = time.perf_counter()
    out = output_dir(args, app_config)
    (trace,) = load_traces([args.trace])
    model = load_model(args.model, app_config["FLOAT_MODE"])
    selector = model.selector

    def rf_localization(trace):
        for sample in trace.rf:
            localize_epoch(sample, trace.layout, selector, model.k)

    def feature_extraction(trace):
        build_epoch_features(trace, selector, model.k, all_anchors=model.all_anchors)

    stages = {
        "rf_localization": rf_localization,
        "feature_extraction": feature_extraction,
        f"{model.kind}_inference": lambda trace: predict_trace(model, trace),
    }
    latency = latency_report(stages, trace, repeats=args.repeats)
    outputs = [
        write_json(model_size(model), os.path.join(out, "model_size.json")),
        write_frame(latency, os.path.join(out, "latency.timing.csv")),
    ]
    write_manifest(out, args, app_config, [args.trace, args.model], outputs, started)


def register_evaluate_commands(subparsers, app_config):
    """Register evaluation-related subcommands"""

    parser = subparsers.add_parser("evaluate", help="run one method over a trace and score it")
    parser.add_argument("--method", choices=METHODS, required=True)
    parser.add_argument("--trace", required=True)
    parser.add_argument("--model", default=None, help="checkpoint stem for fusion / blackbox")
    parser.add_argument("--selector", default=None, help="anchor selector JSON for rf_only / ekf")
    parser.add_argument("--k", type=int, default=3)
    parser.add_argument("--attention", action="store_true", help="also write the fusion attention report")
    parser.add_argument("--out", default=None)
    parser.set_defaults(handler=cmd_evaluate)

    parser = subparsers.add_parser("compare", help="comparison table from evaluate error files")
    parser.add_argument("--results", nargs="+", required=True, help="<method>_errors.csv files")
    parser.add_argument("--out", default=None)
    parser.set_defaults(handler=cmd_compare)

    parser = subparsers.add_parser("gradcheck", help="finite-difference check of every network block")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None)
    parser.set_defaults(handler=cmd_gradcheck)

    parser = subparsers.add_parser("benchmark", help="latency and model size on this machine")
    parser.add_argument("--model", required=True)
    parser.add_argument("--trace", required=True)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--out", default=None)
    parser.set_defaults(handler=cmd_benchmark)
