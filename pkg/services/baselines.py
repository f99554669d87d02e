"""
Algorithmic comparison methods: RF-only multilateration, VO-only dead
reckoning and an EKF fusing the two.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from models import TimedSample, Trajectory
from services.errors import GeometryError, NumericalError, ValidationError
from services.rf_loc import DEFAULT_K, localize_epoch
from services.vo_track import DeadReckonState, PolarStep, integrate_steps, wrap_angle
from services.world_sim import keypoint_noise_scale

logger = logging.getLogger(__name__)


def rf_only(trace, selector=None, k=DEFAULT_K):
    """
    Per-epoch multilateration, optionally after anchor selection.

    Epochs whose multilateration fails are left out of the trajectory and
    logged.
    """
    samples = []
    for index, sample in enumerate(trace.rf):
        try:
            result, _ = localize_epoch(sample, trace.layout, selector, k)
        except GeometryError as e:
            logger.warning(f"{trace.scenario}: rf_only epoch {index} missing ({e})")
            continue
        samples.append(TimedSample(sample.t, result.position))
    if not samples:
        raise NumericalError(f"no epoch of {trace.scenario} could be localized")
    return Trajectory(tuple(samples))


def vo_only(trace):
    """Dead reckoning from the ground-truth start and initial heading"""
    start = trace.gt.first
    origin = DeadReckonState(start.value, trace.initial_heading, trace.vo[0].t)
    steps = [TimedSample(v.t, PolarStep(v.r, v.theta)) for v in trace.vo[1:]]
    return integrate_steps(origin, steps)


@dataclass(frozen=True)
class EkfConfig:
    """
    EKF noise settings. None means "take it from the trace's NoiseModel":
    sigma_r / sigma_theta from the VO base noise, sigma_rf from the LoS range noise.
    """

    sigma_r: float = None
    sigma_theta: float = None
    sigma_rf: float = None
    q_position: float = 1e-4
    q_heading: float = 1e-5
    initial_position_var: float = 1e-4
    initial_heading_var: float = 1e-4
    scale_by_keypoints: bool = True

    def __post_init__(self):
        for name in ("sigma_r", "sigma_theta", "sigma_rf"):
            value = getattr(self, name)
            if value is not None and not value >= 0:
                raise ValidationError(f"{name} must be >= 0, got {value}", path=f"ekf.{name}")
        for name in ("q_position", "q_heading", "initial_position_var", "initial_heading_var"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be >= 0", path=f"ekf.{name}")

    def resolved(self, nm):
        return (
            nm.vo_r_sigma0 if self.sigma_r is None else self.sigma_r,
            nm.vo_theta_sigma0 if self.sigma_theta is None else self.sigma_theta,
            nm.sigma_los if self.sigma_rf is None else self.sigma_rf,
        )


@dataclass
class EkfState:
    x: np.ndarray
    P: np.ndarray

    def symmetrize(self):
        self.P = 0.5 * (self.P + self.P.T)


def ekf_predict(state, step, sigma_r, sigma_theta, Q):
    """
    Motion model: heading += theta, position += r (cos heading, sin heading).
    The polar step is the control input; its noise enters through G.
    """
    px, py, h = state.x
    heading = h + step.theta
    c, s = math.cos(heading), math.sin(heading)
    F = np.array([[1.0, 0.0, -step.r * s],
                  [0.0, 1.0, step.r * c],
                  [0.0, 0.0, 1.0]])
    G = np.array([[c, -step.r * s],
                  [s, step.r * c],
                  [0.0, 1.0]])
    M = np.diag([sigma_r ** 2, sigma_theta ** 2])
    state.x = np.array([px + step.r * c, py + step.r * s, wrap_angle(heading)])
    state.P = F @ state.P @ F.T + G @ M @ G.T + Q
    state.symmetrize()


def ekf_update(state, z, R):
    """Position measurement z = H x with H = [I 0]; Joseph-form covariance"""
    H = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    y = z - H @ state.x
    S = H @ state.P @ H.T + R
    K = state.P @ H.T @ np.linalg.pinv(S)
    state.x = state.x + K @ y
    state.x[2] = wrap_angle(state.x[2])
    I_KH = np.eye(3) - K @ H
    state.P = I_KH @ state.P @ I_KH.T + K @ R @ K.T
    state.symmetrize()


def ekf_fuse(trace, config=None, selector=None, k=DEFAULT_K):
    """
    EKF over [p_x, p_y, heading]: predict with each VO polar step, update
    with the multilaterated RF position.

    Args:
        trace (Trace): simulated run
        config (EkfConfig): noise overrides
        selector (AnchorSelectorModel): optional anchor selection before
            multilateration
        k (int): anchors per selection

    Returns:
        Trajectory: filtered position at every RF epoch

    Raises:
        NumericalError: covariance became non-finite, with the epoch index
    """
    config = config or EkfConfig()
    sigma_r, sigma_theta, sigma_rf = config.resolved(trace.noise_model)
    Q = np.diag([config.q_position, config.q_position, config.q_heading])
    R = np.eye(2) * sigma_rf ** 2
    start = trace.gt.first.value
    state = EkfState(
        x=np.array([start.x, start.y, trace.initial_heading]),
        P=np.diag([config.initial_position_var, config.initial_position_var, config.initial_heading_var]),
    )
    times, xy = [], []
    for index, (rf, vo) in enumerate(zip(trace.rf, trace.vo)):
        if index > 0:
            scale = keypoint_noise_scale(vo.m) if config.scale_by_keypoints else 1.0
            ekf_predict(state, PolarStep(vo.r, vo.theta), sigma_r * scale, sigma_theta * scale, Q)
            _check_finite(state, index)
        try:
            result, _ = localize_epoch(rf, trace.layout, selector, k)
        except GeometryError as e:
            logger.warning(f"{trace.scenario}: EKF epoch {index} predict only ({e})")
        else:
            try:
                ekf_update(state, result.position.as_array(), R)
            except np.linalg.LinAlgError as e:
                raise NumericalError(f"EKF update failed ({e})", epoch=index) from e
            _check_finite(state, index)
        times.append(rf.t)
        xy.append(state.x[:2].copy())
    return Trajectory.from_arrays(times, xy)


def _check_finite(state, index):
    if not (np.all(np.isfinite(state.P)) and np.all(np.isfinite(state.x))):
        raise NumericalError("EKF covariance became non-finite", epoch=index)
