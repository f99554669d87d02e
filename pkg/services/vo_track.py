"""
Visual-odometry path at the feature level: polar steps, dead reckoning and
the VO feature vector fed to fusion.

theta is the per-step heading change in the body frame, not an absolute
heading.
"""
import math
from dataclasses import dataclass

import numpy as np

from models import Position2D, TimedSample, Trajectory
from services.errors import ValidationError

WELL_LIT_KEYPOINTS = 568


def wrap_angle(angle):
    """Wrap to (-pi, pi]"""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped == -math.pi:
        return math.pi
    return wrapped


@dataclass(frozen=True)
class PolarStep:
    r: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.r) and math.isfinite(self.theta)):
            raise ValidationError(f"non-finite polar step ({self.r}, {self.theta})")
        if self.r < 0:
            raise ValidationError(f"r must be >= 0, got {self.r}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))


@dataclass(frozen=True)
class DeadReckonState:
    position: Position2D
    heading: float
    t: float = 0.0


def polar_step(prev, cur, prev_heading):
    """
    Translation and heading change between two positions.

    Args:
        prev (Position2D): previous position
        cur (Position2D): current position
        prev_heading (float): heading of the previous step (radians)

    Returns:
        PolarStep: r = |cur - prev|, theta = wrap(atan2(dy, dx) - prev_heading);
        a zero-length step has theta = 0
    """
    dx = cur.x - prev.x
    dy = cur.y - prev.y
    r = math.hypot(dx, dy)
    if r == 0.0:
        return PolarStep(0.0, 0.0)
    return PolarStep(r, wrap_angle(math.atan2(dy, dx) - prev_heading))


def advance(state, step, t=None):
    """One dead-reckoning update"""
    heading = state.heading + step.theta
    position = Position2D(
        state.position.x + step.r * math.cos(heading),
        state.position.y + step.r * math.sin(heading),
    )
    return DeadReckonState(position, heading, state.t if t is None else t)


def integrate_steps(origin, steps):
    """
    Integrate polar steps from an origin.

    Args:
        origin (DeadReckonState): start position, heading and time
        steps (list): TimedSample values holding PolarStep, in time order

    Returns:
        Trajectory: origin followed by one sample per step
    """
    state = origin
    samples = [TimedSample(origin.t, origin.position)]
    for sample in steps:
        state = advance(state, sample.value, sample.t)
        samples.append(TimedSample(sample.t, state.position))
    return Trajectory(tuple(samples))


def compose_vo_features(step, m, m_ref=WELL_LIT_KEYPOINTS):
    """VO feature vector [r, theta, min(M, m_ref) / m_ref]"""
    if m_ref <= 0:
        raise ValidationError(f"m_ref must be > 0, got {m_ref}")
    return np.array([step.r, step.theta, min(m, m_ref) / m_ref], dtype=float)
