"""
RF localization: received power from CIR, least-squares multilateration,
brute-force best-anchor labels and RF feature composition.
"""
import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from models import Position2D, are_collinear
from services.errors import GeometryError, ValidationError

logger = logging.getLogger(__name__)

STEP_TOLERANCE = 1e-9
GRADIENT_TOLERANCE = 1e-12
MAX_ITERATIONS = 100
TIE_TOLERANCE = 1e-9
DEFAULT_K = 3


@dataclass(frozen=True)
class MultilaterationResult:
    position: Position2D
    residual_rms: float
    iterations: int
    converged: bool


def received_power(cir_power, preamble_count, a_constant):
    """
    Received power in dBm from the channel impulse response.

    Args:
        cir_power (float): C, channel impulse response power
        preamble_count (float): N, preamble accumulation count
        a_constant (float): A, receiver constant in dB

    Returns:
        float: 10 log10(C * 2^17 / N^2) - A
    """
    if not cir_power > 0:
        raise ValidationError(f"CIR power must be > 0, got {cir_power}", path="C")
    if not preamble_count > 0:
        raise ValidationError(f"preamble count must be > 0, got {preamble_count}", path="N")
    return 10.0 * math.log10(cir_power * 2 ** 17 / preamble_count ** 2) - a_constant


def _cost(anchors, ranges, x):
    residuals = ranges - np.hypot(*(anchors - x).T)
    return float(residuals @ residuals), residuals


def multilaterate(ranges, init=None, tol=STEP_TOLERANCE, max_iter=MAX_ITERATIONS):
    """
    Position minimizing sum_i (R_i - |a_i - x|)^2.

    Gauss-Newton with Levenberg damping; only cost-decreasing steps are
    accepted, so the result is never worse than the initial point.

    Args:
        ranges (list): (anchor Position2D, measured range) pairs
        init (Position2D): start point; anchor centroid when None
        tol (float): step-norm convergence threshold in meters
        max_iter (int): iteration cap

    Returns:
        MultilaterationResult: best iterate; converged when an accepted step is
        shorter than tol or the gradient vanishes, False when the cap was hit
    """
    if len(ranges) < 3:
        raise GeometryError(f"need at least 3 anchors, got {len(ranges)}")
    positions = [p for p, _ in ranges]
    if are_collinear(positions):
        raise GeometryError("anchor positions are collinear")

    anchors = np.array([[p.x, p.y] for p in positions], dtype=float)
    measured = np.array([r for _, r in ranges], dtype=float)
    x = anchors.mean(axis=0) if init is None else np.array([init.x, init.y], dtype=float)
    cost, residuals = _cost(anchors, measured, x)
    damping = 1e-3
    converged = False
    iterations = 0

    while iterations < max_iter:
        iterations += 1
        diff = anchors - x
        dist = np.hypot(diff[:, 0], diff[:, 1])
        safe = np.where(dist > 0, dist, 1.0)
        # d residual_i / d x = (a_i - x) / |a_i - x|
        jac = np.where(dist[:, None] > 0, diff / safe[:, None], 0.0)
        jtj = jac.T @ jac
        gradient = jac.T @ residuals
        step = np.linalg.solve(jtj + damping * np.eye(2), -gradient)
        step_norm = float(np.hypot(*step))
        candidate = x + step
        new_cost, new_residuals = _cost(anchors, measured, candidate)
        accepted = new_cost <= cost
        if accepted:
            x, cost, residuals = candidate, new_cost, new_residuals
            damping = max(damping / 10.0, 1e-12)
        else:
            damping *= 10.0
        # a rejected step only counts at a stationary point
        if (accepted and step_norm < tol) or float(np.hypot(*gradient)) < GRADIENT_TOLERANCE:
            converged = True
            break

    if not converged:
        logger.debug(f"multilateration stopped after {iterations} iterations without converging")
    return MultilaterationResult(
        position=Position2D(float(x[0]), float(x[1])),
        residual_rms=math.sqrt(cost / len(measured)),
        iterations=iterations,
        converged=converged,
    )


def ranges_for(sample, layout, anchor_ids=None):
    """(anchor position, range) pairs for the given anchors, in id order"""
    ids = layout.ids if anchor_ids is None else sorted(anchor_ids)
    return [(layout.position_of(i), sample.entry(i).range) for i in ids]


def label_best_anchors(sample, layout, gt, k=DEFAULT_K):
    """
    Binary vector over anchors (id order) marking the K-subset whose
    multilateration lands closest to ground truth.

    Subsets are visited in lexicographic id order and only a strictly better
    (by more than 1e-9 m) subset replaces the incumbent, so ties resolve to
    the lexicographically smallest subset.
    """
    ids = layout.ids
    if not 3 <= k <= len(ids):
        raise ValidationError(f"need n >= K >= 3, got n={len(ids)}, K={k}", path="K")
    best_subset, best_error = None, math.inf
    for subset in itertools.combinations(ids, k):
        try:
            result = multilaterate(ranges_for(sample, layout, subset))
        except GeometryError as e:
            logger.warning(f"Skipping anchor subset {subset}: {e}")
            continue
        error = result.position.distance_to(gt)
        if error < best_error - TIE_TOLERANCE:
            best_subset, best_error = subset, error
    if best_subset is None:
        raise GeometryError(f"no anchor subset of size {k} is usable")
    return np.array([1 if i in best_subset else 0 for i in ids], dtype=int)


def compose_rf_features(mlr, selected, k=DEFAULT_K):
    """
    RF feature vector [x, y, ranges..., powers...], anchors ordered by id.

    Args:
        mlr (MultilaterationResult): location estimate
        selected (list): (anchor_id, range, power) for the selected anchors
        k (int): expected number of anchors

    Returns:
        numpy.ndarray: feature vector of length 2 + 2K
    """
    if len(selected) != k:
        raise ValidationError(f"expected {k} selected anchors, got {len(selected)}", path="selected")
    ordered = sorted(selected, key=lambda item: item[0])
    ranges = [float(r) for _, r, _ in ordered]
    powers = [float(p) for _, _, p in ordered]
    return np.array([mlr.position.x, mlr.position.y, *ranges, *powers], dtype=float)


def localize_epoch(sample, layout, selector=None, k=DEFAULT_K):
    """
    Optional anchor selection followed by multilateration.

    Returns:
        tuple: (MultilaterationResult, list of selected (anchor_id, range, power))
    """
    if selector is None:
        anchor_ids = layout.ids
    else:
        from services.anchor_selector import select_anchors
        anchor_ids = sorted(select_anchors(selector, sample))
    result = multilaterate(ranges_for(sample, layout, anchor_ids))
    selected = [(i, sample.entry(i).range, sample.entry(i).power) for i in anchor_ids]
    return result, selected
