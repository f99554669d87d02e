"""
Time alignment of trajectories (linear interpolation on the sample clock)
"""
import logging

import numpy as np

from models import Position2D
from services.errors import ValidationError

logger = logging.getLogger(__name__)


def _interpolate(traj, times, t):
    index = int(np.searchsorted(times, t, side="left"))
    if times[index] == t:
        return traj.samples[index].value
    before = traj.samples[index - 1]
    after = traj.samples[index]
    w = (t - before.t) / (after.t - before.t)
    p, q = before.value, after.value
    return Position2D(p.x + w * (q.x - p.x), p.y + w * (q.y - p.y))


def interpolate_position(traj, t):
    """
    Position on a trajectory at time t.

    Args:
        traj (Trajectory): source trajectory
        t (float): query time, inside the trajectory span

    Returns:
        Position2D: exact sample when t hits a timestamp, otherwise the linear
        interpolation between the bracketing samples
    """
    start, end = traj.span()
    if not start <= t <= end:
        raise ValidationError(f"t={t} outside trajectory span [{start}, {end}]", path="t")
    return _interpolate(traj, traj.times(), t)


def interpolate_many(traj, query_times):
    """Vectorized interpolation; query times must lie in the span"""
    times = traj.times()
    xy = traj.xy()
    return np.column_stack([
        np.interp(query_times, times, xy[:, 0]),
        np.interp(query_times, times, xy[:, 1]),
    ])


def align_pairs(a, b, tol=0.0):
    """
    Pair every sample of `a` lying inside `b`'s span with `b` at that time.

    Args:
        a (Trajectory): reference clock
        b (Trajectory): trajectory interpolated onto a's timestamps
        tol (float): reserved for a nearest-sample mode; unused by linear alignment

    Returns:
        list: (Position2D from a, Position2D from b) tuples; empty when the spans
        do not intersect
    """
    start, end = b.span()
    times = b.times()
    pairs = []
    for sample in a.samples:
        if start <= sample.t <= end:
            pairs.append((sample.value, _interpolate(b, times, sample.t)))
    if not pairs:
        logger.debug("align_pairs: trajectories do not overlap in time")
    return pairs


def aligned_arrays(a, b):
    """
    Array form of align_pairs.

    Returns:
        tuple: (times, a_xy, b_xy) restricted to a's samples inside b's span
    """
    times = a.times()
    start, end = b.span()
    keep = (times >= start) & (times <= end)
    return times[keep], a.xy()[keep], interpolate_many(b, times[keep])
