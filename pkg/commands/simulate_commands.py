"""
Simulation commands
Generates traces from scenario configs, single or multi-agent
"""
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor

from commands.common import METHODS, output_dir, resolve_method, write_frame, write_json, write_manifest
from services.evaluation import ate, multi_user_report
from services.scenario_config import load_scenario_config
from services.trace_io import write_trace
from services.world_sim import run_scenario, simulate_multi_agent

logger = logging.getLogger(__name__)


def trace_filename(name, seed, agent=None):
    suffix = f"-agent{agent}" if agent is not None else ""
    return f"{name}-seed{seed}{suffix}.jsonl"


def simulate_one(config_path, seed, out):
    """Worker: one scenario run written to out; returns the trace path"""
    config = load_scenario_config(config_path).with_seed(seed)
    trace = run_scenario(config)
    path = os.path.join(out, trace_filename(config.name, seed))
    write_trace(trace, path)
    return path


def cmd_simulate(args, app_config):
    started = time.perf_counter()
    out = output_dir(args, app_config)
    jobs = [(path, args.seed + run) for path in args.config for run in range(args.runs)]
    n_workers = args.jobs or app_config["JOBS"]
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(simulate_one, path, seed, out) for path, seed in jobs]
            outputs = [f.result() for f in futures]
    else:
        outputs = [simulate_one(path, seed, out) for path, seed in jobs]
    write_manifest(out, args, app_config, args.config, outputs, started)


def cmd_multiuser(args, app_config):
    """Simulate up to three agents and report their pairwise relative errors"""
    started = time.perf_counter()
    out = output_dir(args, app_config)
    config = load_scenario_config(args.config).with_seed(args.seed)
    traces = simulate_multi_agent(config, args.agents)
    outputs = []
    for agent, trace in enumerate(traces):
        path = os.path.join(out, trace_filename(config.name, args.seed, agent))
        write_trace(trace, path)
        outputs.append(path)

    method = resolve_method(args.method, app_config, args.model, args.selector)
    estimates = [method(trace) for trace in traces]
    gts = [trace.gt for trace in traces]
    if len(traces) >= 2:
        table, overall = multi_user_report(estimates, gts)
        outputs.append(write_frame(table, os.path.join(out, "pairs.csv")))
        logger.info(f"{args.method}: mean relative distance error {overall['mean_distance_m']:.3f} m, "
                    f"angle error {overall['mean_angle_deg']:.2f} deg over {overall['pairs']} pairs")
    else:
        overall = {"pairs": 0}
    overall["ate_median_m"] = [ate(est, gt).median for est, gt in zip(estimates, gts)]
    outputs.append(write_json(overall, os.path.join(out, "multiuser.json")))
    inputs = [args.config] + [p for p in (args.model, args.selector) if p]
    write_manifest(out, args, app_config, inputs, outputs, started)


def register_simulate_commands(subparsers, app_config):
    """Register simulation-related subcommands"""

    parser = subparsers.add_parser("simulate", help="simulate traces from scenario configs")
    parser.add_argument("--config", nargs="+", required=True, help="scenario TOML file(s)")
    parser.add_argument("--seed", type=int, required=True)
    parser.add_argument("--runs", type=int, default=1, help="runs per config, seeds seed..seed+runs-1")
    parser.add_argument("--jobs", type=int, default=None, help="parallel worker processes")
    parser.add_argument("--out", default=None)
    parser.set_defaults(handler=cmd_simulate)

    parser = subparsers.add_parser("multiuser", help="simulate several agents and report relative errors")
    parser.add_argument("--config", required=True)
    parser.add_argument("--seed", type=int, required=True)
    parser.add_argument("--agents", type=int, default=2)
    parser.add_argument("--method", choices=METHODS, default="ekf")
    parser.add_argument("--model", default=None, help="checkpoint stem for learned methods")
    parser.add_argument("--selector", default=None, help="anchor selector JSON")
    parser.add_argument("--out", default=None)
    parser.set_defaults(handler=cmd_multiuser)
