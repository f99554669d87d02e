"""
Evaluation metrics and reports: absolute trajectory error, pairwise
relative errors between agents, empirical CDFs, method comparison tables,
correlation studies and latency measurements.

No trajectory alignment is applied before ATE: estimates and ground truth
share the anchor frame.
"""
import itertools
import logging
import math
import time
from dataclasses import dataclass

import numpy as np
import pandas as pd

from services.errors import ValidationError
from services.trajectory import aligned_arrays, interpolate_many

logger = logging.getLogger(__name__)

COMPARE_COLUMNS = ["method", "mean", "median", "std", "max", "count"]
COMPARE_DECIMALS = 6


@dataclass(frozen=True)
class AteSummary:
    t: np.ndarray
    errors: np.ndarray
    mean: float
    median: float
    std: float
    max: float
    count: int

    @classmethod
    def from_errors(cls, t, errors):
        errors = np.asarray(errors, dtype=float)
        return cls(
            t=np.asarray(t, dtype=float),
            errors=errors,
            mean=float(np.mean(errors)),
            median=float(np.median(errors)),
            std=float(np.std(errors)),
            max=float(np.max(errors)),
            count=int(errors.size),
        )

    def stats(self):
        return {"mean": self.mean, "median": self.median, "std": self.std, "max": self.max, "count": self.count}

    def to_frame(self):
        """Per-point errors: t, error_m"""
        return pd.DataFrame({"t": self.t, "error_m": self.errors})

    def window(self, start_fraction, stop_fraction):
        """Errors of the points falling in a fraction of the evaluated span"""
        n = self.count
        lo, hi = int(math.floor(n * start_fraction)), int(math.ceil(n * stop_fraction))
        return self.errors[lo:max(hi, lo + 1)]


def ate(est, gt):
    """
    Absolute trajectory error of est against gt.

    Every est sample inside gt's time span is paired with gt interpolated at
    that time; the error is the Euclidean distance of each pair.

    Raises:
        ValidationError: the trajectories do not overlap in time
    """
    t, est_xy, gt_xy = aligned_arrays(est, gt)
    if t.size == 0:
        raise ValidationError("estimate and ground truth do not overlap in time", path="trajectory")
    errors = np.hypot(*(est_xy - gt_xy).T)
    return AteSummary.from_errors(t, errors)


@dataclass(frozen=True)
class PairwiseRelError:
    t: np.ndarray
    distance_errors: np.ndarray
    angle_errors: np.ndarray
    median_distance: float
    median_angle: float
    mean_distance: float
    mean_angle: float

    def to_frame(self):
        return pd.DataFrame({"t": self.t, "distance_error_m": self.distance_errors,
                             "angle_error_deg": self.angle_errors})


def _common_times(trajectories):
    times = trajectories[0].times()
    start = max(tr.span()[0] for tr in trajectories)
    end = min(tr.span()[1] for tr in trajectories)
    return times[(times >= start) & (times <= end)]


def relative_errors(est_a, est_b, gt_a, gt_b):
    """
    Relative distance and bearing errors between two agents.

    At every timestamp of est_a lying in all four spans: distance error
    | |est_b - est_a| - |gt_b - gt_a| | in meters, and the absolute angle
    between (est_b - est_a) and (gt_b - gt_a) in degrees, in [0, 180]. Epochs
    where the true separation is below 1e-6 m are skipped.

    Raises:
        ValidationError: no common time overlap
    """
    t = _common_times([est_a, est_b, gt_a, gt_b])
    if t.size == 0:
        raise ValidationError("trajectories have no common time overlap", path="trajectory")
    ea, eb, ga, gb = (interpolate_many(tr, t) for tr in (est_a, est_b, gt_a, gt_b))
    est_vec, gt_vec = eb - ea, gb - ga
    d_est = np.hypot(*est_vec.T)
    d_gt = np.hypot(*gt_vec.T)
    keep = d_gt >= 1e-6
    if not keep.any():
        raise ValidationError("agents coincide at every common epoch", path="trajectory")
    skipped = int((~keep).sum())
    if skipped:
        logger.warning(f"relative_errors: skipped {skipped} epochs with coincident agents")
    est_angle = np.arctan2(est_vec[keep, 1], est_vec[keep, 0])
    gt_angle = np.arctan2(gt_vec[keep, 1], gt_vec[keep, 0])
    diff = np.abs(np.degrees(np.angle(np.exp(1j * (est_angle - gt_angle)))))
    dist = np.abs(d_est[keep] - d_gt[keep])
    return PairwiseRelError(
        t=t[keep],
        distance_errors=dist,
        angle_errors=np.clip(diff, 0.0, 180.0),
        median_distance=float(np.median(dist)),
        median_angle=float(np.median(diff)),
        mean_distance=float(np.mean(dist)),
        mean_angle=float(np.mean(diff)),
    )


def multi_user_report(estimates, gts):
    """
    Relative errors for every agent pair.

    Args:
        estimates (list): one estimated Trajectory per agent
        gts (list): matching ground-truth trajectories

    Returns:
        tuple: (per-pair DataFrame with columns agent_a, agent_b, mean and
        median of distance and angle errors; overall dict averaging the
        per-pair epoch means over pairs)
    """
    if len(estimates) != len(gts) or len(estimates) < 2:
        raise ValidationError("need matching estimates and ground truth for at least two agents",
                              path="agents")
    rows = []
    for a, b in itertools.combinations(range(len(estimates)), 2):
        rel = relative_errors(estimates[a], estimates[b], gts[a], gts[b])
        rows.append({
            "agent_a": a, "agent_b": b,
            "mean_distance_m": rel.mean_distance, "median_distance_m": rel.median_distance,
            "mean_angle_deg": rel.mean_angle, "median_angle_deg": rel.median_angle,
        })
    table = pd.DataFrame(rows)
    overall = {
        "pairs": len(rows),
        "mean_distance_m": float(table["mean_distance_m"].mean()),
        "mean_angle_deg": float(table["mean_angle_deg"].mean()),
    }
    return table, overall


def cdf(errors):
    """
    Exact empirical CDF.

    Returns:
        pandas.DataFrame: sorted values with cumulative fractions k/n
    """
    values = np.sort(np.asarray(errors, dtype=float).ravel())
    if values.size == 0:
        raise ValidationError("cannot build a CDF from no values", path="errors")
    fractions = np.arange(1, values.size + 1) / values.size
    return pd.DataFrame({"value": values, "fraction": fractions})


def compare_report(results):
    """
    Comparison table, one row per method, sorted by median then name.

    Args:
        results (dict): method name -> AteSummary

    Returns:
        tuple: (DataFrame with COMPARE_COLUMNS, aligned text rendering)
    """
    rows = [{"method": name, **summary.stats()} for name, summary in results.items()]
    table = pd.DataFrame(rows, columns=COMPARE_COLUMNS)
    table = table.sort_values(["median", "method"], kind="mergesort").reset_index(drop=True)
    table[["mean", "median", "std", "max"]] = table[["mean", "median", "std", "max"]].round(COMPARE_DECIMALS)
    return table, table.to_string(index=False, float_format=lambda v: f"{v:.3f}")


def write_compare_csv(table, path):
    table.to_csv(path, index=False)


def read_compare_csv(path):
    return pd.read_csv(path, float_precision="round_trip")


def pearson(a, b):
    """Pearson correlation coefficient; 0-variance inputs are rejected"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.size < 2:
        raise ValidationError(f"need two equal-length series of at least 2 values, got {a.shape} and {b.shape}")
    a_c, b_c = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(a_c @ a_c) * float(b_c @ b_c))
    if denom == 0.0:
        raise ValidationError("correlation undefined for a constant series")
    return float(a_c @ b_c) / denom


def latency_report(stages, trace, repeats=1):
    """
    Wall time per epoch of each pipeline stage on this machine.

    Args:
        stages (dict): stage name -> callable(trace) processing the whole trace
        trace (Trace): input
        repeats (int): timed runs per stage; the fastest is kept

    Returns:
        pandas.DataFrame: stage, total_s, per_epoch_ms
    """
    rows = []
    for name, stage in stages.items():
        best = math.inf
        for _ in range(repeats):
            started = time.perf_counter()
            stage(trace)
            best = min(best, time.perf_counter() - started)
        rows.append({"stage": name, "total_s": best, "per_epoch_ms": 1000.0 * best / len(trace)})
        logger.info(f"{name}: {1000.0 * best / len(trace):.3f} ms per epoch")
    return pd.DataFrame(rows, columns=["stage", "total_s", "per_epoch_ms"])


def power_error_correlation(traces, selector=None, k=3):
    """
    Pearson coefficient between the weakest selected anchor's received power
    and the localization error, over every localizable epoch.

    Returns:
        tuple: (coefficient, DataFrame with t, min_power, error_m)
    """
    from services.errors import GeometryError
    from services.rf_loc import localize_epoch

    rows = []
    for trace in traces:
        for sample, truth in zip(trace.rf, trace.gt.samples):
            try:
                result, selected = localize_epoch(sample, trace.layout, selector, k)
            except GeometryError as e:
                logger.warning(f"{trace.scenario}: epoch at t={sample.t} skipped ({e})")
                continue
            rows.append({
                "t": sample.t,
                "min_power": min(p for _, _, p in selected),
                "error_m": result.position.distance_to(truth.value),
            })
    frame = pd.DataFrame(rows, columns=["t", "min_power", "error_m"])
    return pearson(frame["min_power"], frame["error_m"]), frame


def window_ate(model, windows):
    """Position error of a sequence model on held-out windows (last epoch of each)"""
    if len(windows) == 0:
        raise ValidationError("no held-out windows to evaluate", path="windows")
    predictions = model.predict_windows(windows)
    return AteSummary.from_errors(windows.t, np.hypot(*(predictions - windows.target).T))
