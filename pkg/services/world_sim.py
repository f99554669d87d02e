"""
Synthetic testbed: ground-truth trajectories plus per-epoch UWB and VO
measurements under LoS/NLoS and lighting conditions.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from models import (
    WALKING_SPEED, Environment, NoiseModel, Position2D, Rates, RfEntry, RfSample,
    TimedSample, Trace, Trajectory, VoSample,
)
from services.errors import ValidationError
from services.rng import RngStream
from services.vo_track import PolarStep, polar_step, wrap_angle

logger = logging.getLogger(__name__)

SHAPES = ("line", "rectangle", "s_curve", "waypoints")

# keypoint thresholds of the VO certainty model
KEYPOINTS_RELIABLE = 500
KEYPOINTS_DEGRADED = 300
KEYPOINTS_LOST = 100

MIN_RANGE = 1e-3

NUMERIC_FIELDS = ("speed", "duration", "heading", "length", "width", "height", "amplitude",
                  "wavelength", "segment_duration")
OPTIONAL_FIELDS = ("length", "segment_duration")


@dataclass(frozen=True)
class TrajectorySpec:
    """Path shape and motion profile; unused fields are ignored per shape"""

    shape: str = "line"
    speed: float = 1.0
    duration: float = 10.0
    start: tuple = (0.0, 0.0)
    heading: float = 0.0
    length: Optional[float] = None
    width: float = 4.0
    height: float = 3.0
    amplitude: float = 1.0
    wavelength: float = 4.0
    waypoints: tuple = ()
    closed: bool = False
    speeds: tuple = ()
    segment_duration: Optional[float] = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValidationError(f"unknown shape {self.shape!r}, expected one of {SHAPES}",
                                  path="trajectory.shape")
        for name in NUMERIC_FIELDS:
            value = getattr(self, name)
            if value is None and name in OPTIONAL_FIELDS:
                continue
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValidationError(f"expected a number, got {value!r}", path=f"trajectory.{name}")
        if not isinstance(self.closed, bool):
            raise ValidationError(f"expected true or false, got {self.closed!r}", path="trajectory.closed")
        for i, s in enumerate(self.speeds):
            if isinstance(s, bool) or not isinstance(s, (int, float)):
                raise ValidationError(f"expected a number, got {s!r}", path=f"trajectory.speeds[{i}]")
        if not self.speed > 0:
            raise ValidationError(f"speed must be > 0, got {self.speed}", path="trajectory.speed")
        if not self.duration > 0:
            raise ValidationError(f"duration must be > 0, got {self.duration}",
                                  path="trajectory.duration")
        if self.speeds:
            if any(not s > 0 for s in self.speeds):
                raise ValidationError("segment speeds must be > 0", path="trajectory.speeds")
            if not (self.segment_duration and self.segment_duration > 0):
                raise ValidationError("segment_duration must be > 0 when speeds are given",
                                      path="trajectory.segment_duration")

    def to_dict(self):
        return {
            "shape": self.shape, "speed": self.speed, "duration": self.duration,
            "start": list(self.start), "heading": self.heading, "length": self.length,
            "width": self.width, "height": self.height, "amplitude": self.amplitude,
            "wavelength": self.wavelength, "waypoints": [list(w) for w in self.waypoints],
            "closed": self.closed, "speeds": list(self.speeds),
            "segment_duration": self.segment_duration,
        }


def _polyline(spec, rng):
    sx, sy = (float(v) for v in spec.start)
    if spec.shape == "line":
        length = spec.length if spec.length is not None else spec.speed * spec.duration
        if not length > 0:
            raise ValidationError("line length must be > 0", path="trajectory.length")
        end = (sx + length * math.cos(spec.heading), sy + length * math.sin(spec.heading))
        return np.array([[sx, sy], end]), False
    if spec.shape == "rectangle":
        if not (spec.width > 0 and spec.height > 0):
            raise ValidationError(
                f"zero-area rectangle ({spec.width} x {spec.height})", path="trajectory"
            )
        w, h = spec.width, spec.height
        pts = np.array([[sx, sy], [sx + w, sy], [sx + w, sy + h], [sx, sy + h], [sx, sy]])
        return pts, True
    if spec.shape == "s_curve":
        length = spec.length if spec.length is not None else spec.speed * spec.duration
        if not length > 0:
            raise ValidationError("s_curve length must be > 0", path="trajectory.length")
        phase = rng.uniform(0.0, 2.0 * math.pi)
        u = np.linspace(0.0, length, 801)
        v = spec.amplitude * (np.sin(2.0 * math.pi * u / spec.wavelength + phase) - math.sin(phase))
        c, s = math.cos(spec.heading), math.sin(spec.heading)
        return np.column_stack([sx + c * u - s * v, sy + s * u + c * v]), False
    points = [tuple(float(v) for v in p) for p in spec.waypoints]
    deduped = [p for i, p in enumerate(points) if i == 0 or p != points[i - 1]]
    if len(deduped) < 2:
        raise ValidationError("waypoints shape needs at least 2 distinct points",
                              path="trajectory.waypoints")
    if spec.closed and deduped[-1] != deduped[0]:
        deduped.append(deduped[0])
    return np.array(deduped), spec.closed


def _arclength_at(spec, times):
    if not spec.speeds:
        return spec.speed * times
    seg = spec.segment_duration
    s = np.empty_like(times)
    for i, t in enumerate(times):
        full = int(t // seg)
        covered = sum(spec.speeds[k % len(spec.speeds)] * seg for k in range(full))
        s[i] = covered + spec.speeds[full % len(spec.speeds)] * (t - full * seg)
    return s


def _point_at(pts, cumulative, s):
    index = int(np.searchsorted(cumulative, s, side="right")) - 1
    index = min(max(index, 0), len(pts) - 2)
    seg_len = cumulative[index + 1] - cumulative[index]
    w = (s - cumulative[index]) / seg_len
    return pts[index] + w * (pts[index + 1] - pts[index])


def generate_trajectory(spec, rate, rng, reverse=False, offset_fraction=0.0):
    """
    Sample a shape at a fixed rate while moving at the configured speed.

    Closed shapes loop; open shapes are walked back and forth when the
    duration outlasts the path.

    Args:
        spec (TrajectorySpec): shape, speed and duration
        rate (float): sampling rate in Hz
        rng (RngStream): randomness for shapes that need it (s_curve phase)
        reverse (bool): traverse the path in the opposite direction
        offset_fraction (float): start this fraction of the path length further on

    Returns:
        Trajectory: samples at t = k / rate, k = 0..floor(duration * rate)
    """
    if not rate > 0:
        raise ValidationError(f"rate must be > 0, got {rate}", path="rates.rf_hz")
    pts, closed = _polyline(spec, rng)
    if reverse:
        pts = pts[::-1].copy()
    cumulative = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    total = cumulative[-1]

    n = int(math.floor(spec.duration * rate + 1e-9)) + 1
    times = np.arange(n) / rate
    arclength = _arclength_at(spec, times) + offset_fraction * total

    samples = []
    for t, s in zip(times, arclength):
        if closed:
            s = math.fmod(s, total)
        else:
            s = math.fmod(s, 2.0 * total)
            if s > total:
                s = 2.0 * total - s
        p = _point_at(pts, cumulative, s)
        samples.append(TimedSample(float(t), Position2D(float(p[0]), float(p[1]))))
    return Trajectory(tuple(samples))


class LosResult(NamedTuple):
    los: bool
    crossings: int


def _segment_touches_rect(a, b, rect):
    # Liang-Barsky on the closed rectangle: boundary contact counts as a crossing
    dx, dy = b.x - a.x, b.y - a.y
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, a.x - rect.xmin), (dx, rect.xmax - a.x),
                 (-dy, a.y - rect.ymin), (dy, rect.ymax - a.y)):
        if p == 0.0:
            if q < 0.0:
                return False
            continue
        ratio = q / p
        if p < 0.0:
            t0 = max(t0, ratio)
        else:
            t1 = min(t1, ratio)
        if t0 > t1:
            return False
    return True


def los_test(a, b, env):
    """Count occluders the segment a-b touches; LoS when there are none"""
    crossings = sum(1 for rect in env.occluders if _segment_touches_rect(a, b, rect))
    return LosResult(crossings == 0, crossings)


def simulate_power(distance, crossings, nm, rng):
    """
    Log-distance path loss with a per-wall penalty and log-normal shadowing.

    Returns:
        float: p0 - 10 gamma log10(d / d0) - crossings * wall_penalty + N(0, shadow_sigma)
    """
    if not distance > 0:
        raise ValidationError(f"distance must be > 0, got {distance}", path="distance")
    gamma = nm.gamma_los if crossings == 0 else nm.gamma_nlos
    mean = nm.p0 - 10.0 * gamma * math.log10(distance / nm.d0) - crossings * nm.wall_penalty
    return rng.gauss(mean, nm.shadow_sigma)


def simulate_rf_epoch(gt_pos, layout, env, nm, rng, t=0.0):
    """
    Ranges and received powers to every anchor for one epoch.

    LoS ranges carry Gaussian noise; NLoS ranges add one exponential positive
    bias per occluder crossed (paths only get longer around obstacles) before
    the Gaussian term.
    """
    if not env.bounds.contains(gt_pos):
        raise ValidationError(f"position ({gt_pos.x}, {gt_pos.y}) outside environment bounds")
    entries = []
    for anchor in layout.anchors:
        distance = gt_pos.distance_to(anchor.position)
        los, crossings = los_test(gt_pos, anchor.position, env)
        if los:
            measured = rng.gauss(distance, nm.sigma_los)
        else:
            bias = sum(rng.exponential(nm.nlos_bias_mean) for _ in range(crossings))
            measured = rng.gauss(distance + bias, nm.sigma_nlos)
        power = simulate_power(max(distance, MIN_RANGE), crossings, nm, rng)
        entries.append(RfEntry(anchor.id, max(measured, MIN_RANGE), power, los))
    return RfSample(float(t), tuple(entries))


def speed_factor(speed, nm):
    """Fraction of keypoints kept when moving faster than walking pace"""
    excess = max(0.0, speed - WALKING_SPEED)
    return max(0.1, 1.0 - nm.m_speed_penalty * excess)


def simulate_keypoints(pos, speed, env, nm, rng):
    """Matching keypoint count at a position and speed"""
    mean = nm.m_well_lit * env.zone_scale(pos) * speed_factor(speed, nm)
    noise = rng.gauss(0.0, nm.m_noise_fraction * mean)
    return max(0, int(round(mean)) + int(round(noise)))


def keypoint_noise_scale(m):
    """
    VO noise multiplier s(M), non-increasing in M.

    1 for M >= 500, linear to 2 at M = 300, linear to 8 at M = 100, 10 below.
    """
    if m >= KEYPOINTS_RELIABLE:
        return 1.0
    if m >= KEYPOINTS_DEGRADED:
        return 1.0 + (KEYPOINTS_RELIABLE - m) / 200.0
    if m >= KEYPOINTS_LOST:
        return 2.0 + 6.0 * (KEYPOINTS_DEGRADED - m) / 200.0
    return 10.0


@dataclass
class VoChannelState:
    """Per-run VO channel memory: true heading, low-keypoint run, last step"""

    heading: float = 0.0
    low_run: int = 0
    last_step: PolarStep = field(default_factory=lambda: PolarStep(0.0, 0.0))


def simulate_vo_epoch(prev_gt, cur_gt, m, nm, rng, state=None, t=0.0):
    """
    Noisy polar step for one epoch.

    Tracking is lost once M < 100 for `nm.lost_after` consecutive epochs; a
    lost epoch repeats the last emitted step and carries the flag.

    Args:
        prev_gt (Position2D): previous ground-truth position
        cur_gt (Position2D): current ground-truth position
        m (int): matching keypoints at this epoch
        nm (NoiseModel): noise parameters
        rng (RngStream): VO noise stream
        state (VoChannelState): channel memory, updated in place
        t (float): epoch time

    Returns:
        VoSample: emitted step
    """
    state = state if state is not None else VoChannelState()
    true_step = polar_step(prev_gt, cur_gt, state.heading)
    scale = keypoint_noise_scale(m)
    r_noise = rng.gauss(0.0, nm.vo_r_sigma0 * scale)
    theta_noise = rng.gauss(0.0, nm.vo_theta_sigma0 * scale)
    if true_step.r > 0:
        state.heading = wrap_angle(state.heading + true_step.theta)

    state.low_run = state.low_run + 1 if m < KEYPOINTS_LOST else 0
    if state.low_run >= nm.lost_after:
        step = state.last_step
        return VoSample(float(t), step.r, step.theta, int(m), True)

    step = PolarStep(max(0.0, true_step.r + r_noise), wrap_angle(true_step.theta + theta_noise))
    state.last_step = step
    return VoSample(float(t), step.r, step.theta, int(m), False)


def initial_heading(gt):
    """Heading of the first non-zero ground-truth step"""
    positions = gt.positions()
    for p, q in zip(positions, positions[1:]):
        if p != q:
            return math.atan2(q.y - p.y, q.x - p.x)
    return 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce one simulated run"""

    name: str
    environment: Environment
    layout: object
    trajectory: TrajectorySpec
    noise: NoiseModel = field(default_factory=NoiseModel)
    rates: Rates = field(default_factory=Rates)
    seed: int = 0
    family: str = "default"

    def __post_init__(self):
        for i, anchor in enumerate(self.layout.anchors):
            if not self.environment.bounds.contains(anchor.position):
                raise ValidationError(
                    f"anchor {anchor.id} at ({anchor.position.x}, {anchor.position.y}) outside bounds",
                    path=f"anchors[{i}]",
                )

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


def run_scenario(config, agent=0, reverse=False, offset_fraction=0.0):
    """
    Simulate one full trace.

    Args:
        config (ScenarioConfig): validated scenario
        agent (int): agent index; selects independent RNG streams
        reverse (bool): traverse the path backwards
        offset_fraction (float): start further along the path

    Returns:
        Trace: ground truth plus RF and VO samples on the RF epoch clock
    """
    prefix = f"agent{agent}/world_sim" if agent else "world_sim"
    traj_rng = RngStream.named(config.seed, f"{prefix}/trajectory")
    rf_rng = RngStream.named(config.seed, f"{prefix}/rf")
    kp_rng = RngStream.named(config.seed, f"{prefix}/keypoints")
    vo_rng = RngStream.named(config.seed, f"{prefix}/vo")

    rate = config.rates.rf_hz
    gt = generate_trajectory(config.trajectory, rate, traj_rng, reverse, offset_fraction)
    env, nm = config.environment, config.noise
    for i, sample in enumerate(gt.samples):
        if not env.bounds.contains(sample.value):
            raise ValidationError(
                f"trajectory leaves environment bounds at t={sample.t}", path="trajectory"
            )

    heading0 = initial_heading(gt)
    vo_state = VoChannelState(heading=heading0)
    rf, vo = [], []
    prev = gt.samples[0].value
    for k, sample in enumerate(gt.samples):
        pos = sample.value
        rf.append(simulate_rf_epoch(pos, config.layout, env, nm, rf_rng, sample.t))
        speed = prev.distance_to(pos) * rate if k else config.trajectory.speed
        m = simulate_keypoints(pos, speed, env, nm, kp_rng)
        if k == 0:
            vo.append(VoSample(sample.t, 0.0, 0.0, m, False))
        else:
            vo.append(simulate_vo_epoch(prev, pos, m, nm, vo_rng, vo_state, sample.t))
        prev = pos

    lost = sum(1 for v in vo if v.tracking_lost)
    nlos = sum(1 for s in rf for e in s.entries if not e.los)
    logger.info(
        f"Simulated {config.name} (agent {agent}): {len(gt)} epochs, "
        f"{nlos} NLoS links, {lost} lost VO epochs"
    )
    return Trace(
        scenario=config.name if not agent else f"{config.name}#agent{agent}",
        seed=config.seed,
        layout=config.layout,
        environment=env,
        gt=gt,
        rf=tuple(rf),
        vo=tuple(vo),
        rates=config.rates,
        noise_model=nm,
        initial_heading=heading0,
        family=config.family,
    )


def simulate_multi_agent(config, n_agents):
    """
    Up to three agents on the same path, alternating direction and spread
    evenly along it.
    """
    if not 1 <= n_agents <= 3:
        raise ValidationError(f"agents must be between 1 and 3, got {n_agents}", path="agents")
    traces = []
    for agent in range(n_agents):
        traces.append(run_scenario(
            config, agent=agent, reverse=bool(agent % 2), offset_fraction=agent / n_agents
        ))
    return traces
