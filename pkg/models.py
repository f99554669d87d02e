"""
Domain data models shared by the simulator, the trackers and the evaluation.

All models are frozen dataclasses; `to_dict` / `from_dict` give the plain
representation used in trace files, configs and manifests.
"""
import math
from dataclasses import dataclass, field, asdict, fields, replace
from typing import Any, Optional

import numpy as np

from services.errors import ValidationError

WALKING_SPEED = 1.4  # m/s; keypoint penalty applies above this


def _require_finite(path, *values):
    for value in values:
        if not math.isfinite(value):
            raise ValidationError(f"must be finite, got {value}", path=path)


@dataclass(frozen=True)
class Position2D:
    """Planar position in the anchor frame (meters)"""

    x: float
    y: float

    def __post_init__(self):
        _require_finite("position", self.x, self.y)

    def distance_to(self, other):
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_array(self):
        return np.array([self.x, self.y], dtype=float)

    @classmethod
    def from_array(cls, xy):
        return cls(float(xy[0]), float(xy[1]))

    def to_dict(self):
        return {"x": self.x, "y": self.y}

    @classmethod
    def from_dict(cls, data):
        return cls(float(data["x"]), float(data["y"]))


@dataclass(frozen=True)
class TimedSample:
    t: float
    value: Any

    def __post_init__(self):
        _require_finite("t", self.t)
        if self.t < 0:
            raise ValidationError(f"timestamp must be >= 0, got {self.t}", path="t")


@dataclass(frozen=True)
class Trajectory:
    """Timestamped 2D path, ground truth or estimate"""

    samples: tuple

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        if not samples:
            raise ValidationError("trajectory needs at least one sample")
        for previous, current in zip(samples, samples[1:]):
            if not current.t > previous.t:
                raise ValidationError(
                    f"timestamps must be strictly increasing ({previous.t} then {current.t})"
                )

    def __len__(self):
        return len(self.samples)

    @property
    def first(self):
        return self.samples[0]

    @property
    def last(self):
        return self.samples[-1]

    def span(self):
        return self.first.t, self.last.t

    def times(self):
        return np.array([s.t for s in self.samples], dtype=float)

    def xy(self):
        return np.array([[s.value.x, s.value.y] for s in self.samples], dtype=float)

    def positions(self):
        return [s.value for s in self.samples]

    @classmethod
    def from_arrays(cls, t, xy):
        return cls(tuple(
            TimedSample(float(ti), Position2D(float(p[0]), float(p[1])))
            for ti, p in zip(t, xy)
        ))

    def to_dict(self):
        return {"t": [s.t for s in self.samples],
                "xy": [[s.value.x, s.value.y] for s in self.samples]}


@dataclass(frozen=True)
class Anchor:
    id: int
    position: Position2D


@dataclass(frozen=True)
class AnchorLayout:
    """Fixed RF anchors; at least three, not all collinear"""

    anchors: tuple

    def __post_init__(self):
        anchors = tuple(sorted(self.anchors, key=lambda a: a.id))
        object.__setattr__(self, "anchors", anchors)
        ids = [a.id for a in anchors]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"anchor ids must be unique, got {ids}", path="anchors")
        if len(anchors) < 3:
            raise ValidationError(f"need at least 3 anchors, got {len(anchors)}", path="anchors")
        if are_collinear([a.position for a in anchors]):
            raise ValidationError("anchor positions are collinear", path="anchors")

    @property
    def ids(self):
        return [a.id for a in self.anchors]

    def __len__(self):
        return len(self.anchors)

    def position_of(self, anchor_id):
        for anchor in self.anchors:
            if anchor.id == anchor_id:
                return anchor.position
        raise ValidationError(f"unknown anchor id {anchor_id}", path="anchors")

    def to_dict(self):
        return [{"id": a.id, "x": a.position.x, "y": a.position.y} for a in self.anchors]

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(
            Anchor(int(item["id"]), Position2D(float(item["x"]), float(item["y"])))
            for item in data
        ))


def are_collinear(positions, tol=1e-9):
    """True when the points span less than a 2D area (relative tolerance)"""
    pts = np.array([[p.x, p.y] for p in positions], dtype=float)
    if len(pts) < 3:
        return True
    centered = pts - pts.mean(axis=0)
    singular = np.linalg.svd(centered, compute_uv=False)
    if singular[0] == 0:
        return True
    return singular[-1] / singular[0] < tol


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle [xmin, xmax] x [ymin, ymax]"""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        _require_finite("rect", self.xmin, self.ymin, self.xmax, self.ymax)
        if self.xmax < self.xmin or self.ymax < self.ymin:
            raise ValidationError(f"inverted rectangle {self}", path="rect")

    def contains(self, p):
        return self.xmin <= p.x <= self.xmax and self.ymin <= p.y <= self.ymax

    def contains_rect(self, other):
        return (self.xmin <= other.xmin and other.xmax <= self.xmax
                and self.ymin <= other.ymin and other.ymax <= self.ymax)

    def to_list(self):
        return [self.xmin, self.ymin, self.xmax, self.ymax]

    @classmethod
    def from_list(cls, values):
        if len(values) != 4:
            raise ValidationError(f"rectangle needs 4 numbers, got {values}")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class DimZone:
    rect: Rect
    keypoint_scale: float

    def __post_init__(self):
        if not 0 < self.keypoint_scale <= 1:
            raise ValidationError(
                f"keypoint_scale must be in (0, 1], got {self.keypoint_scale}", path="dim_zones"
            )


@dataclass(frozen=True)
class Environment:
    """Room bounds plus RF blockers and dimly lit zones"""

    bounds: Rect
    occluders: tuple = ()
    dim_zones: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "occluders", tuple(self.occluders))
        object.__setattr__(self, "dim_zones", tuple(self.dim_zones))
        for i, occluder in enumerate(self.occluders):
            if not self.bounds.contains_rect(occluder):
                raise ValidationError("occluder lies outside bounds", path=f"environment.occluders[{i}]")
        for i, zone in enumerate(self.dim_zones):
            if not self.bounds.contains_rect(zone.rect):
                raise ValidationError("dim zone lies outside bounds", path=f"environment.dim_zones[{i}]")

    def zone_scale(self, position):
        """Keypoint scale at a position; the darkest overlapping zone wins"""
        scale = 1.0
        for zone in self.dim_zones:
            if zone.rect.contains(position):
                scale = min(scale, zone.keypoint_scale)
        return scale

    def to_dict(self):
        return {
            "bounds": self.bounds.to_list(),
            "occluders": [o.to_list() for o in self.occluders],
            "dim_zones": [{"rect": z.rect.to_list(), "keypoint_scale": z.keypoint_scale}
                          for z in self.dim_zones],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            bounds=Rect.from_list(data["bounds"]),
            occluders=tuple(Rect.from_list(o) for o in data.get("occluders", [])),
            dim_zones=tuple(DimZone(Rect.from_list(z["rect"]), float(z["keypoint_scale"]))
                            for z in data.get("dim_zones", [])),
        )


@dataclass(frozen=True)
class NoiseModel:
    """
    Sensor noise parameters. Defaults are calibrated so that five surrounding
    anchors give ~0.2 m median multilateration error in LoS and ~1 m in NLoS,
    LoS power stays above -90 dBm at 30 m and single-wall NLoS power drops
    below -95 dBm by 15 m.
    """

    sigma_los: float = 0.25
    nlos_bias_mean: float = 0.8
    sigma_nlos: float = 0.3
    p0: float = -55.0
    d0: float = 1.0
    gamma_los: float = 2.0
    gamma_nlos: float = 3.0
    wall_penalty: float = 6.0
    shadow_sigma: float = 2.0
    vo_r_sigma0: float = 0.005
    vo_theta_sigma0: float = 0.004
    m_well_lit: int = 568
    m_speed_penalty: float = 0.25
    m_noise_fraction: float = 0.05
    lost_after: int = 3

    def __post_init__(self):
        for name in ("sigma_los", "nlos_bias_mean", "sigma_nlos", "shadow_sigma",
                     "vo_r_sigma0", "vo_theta_sigma0", "m_noise_fraction", "wall_penalty"):
            value = getattr(self, name)
            if not value >= 0:
                raise ValidationError(f"must be >= 0, got {value}", path=f"noise.{name}")
        if not self.gamma_nlos > self.gamma_los:
            raise ValidationError(
                f"gamma_nlos ({self.gamma_nlos}) must exceed gamma_los ({self.gamma_los})",
                path="noise.gamma_nlos",
            )
        if self.d0 <= 0:
            raise ValidationError("must be > 0", path="noise.d0")
        if self.m_well_lit <= 0:
            raise ValidationError("must be > 0", path="noise.m_well_lit")
        if self.lost_after < 1:
            raise ValidationError("must be >= 1", path="noise.lost_after")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data, path="noise"):
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, value in data.items():
            if key not in known:
                raise ValidationError("unknown noise parameter", path=f"{path}.{key}")
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValidationError(f"expected a number, got {value!r}", path=f"{path}.{key}")
            if known[key].type is int:
                if not float(value).is_integer():
                    raise ValidationError(f"expected an integer, got {value!r}", path=f"{path}.{key}")
                values[key] = int(value)
            else:
                values[key] = float(value)
        return cls(**values)

    def zero_noise(self):
        """Same propagation model with every random term switched off"""
        return replace(self, sigma_los=0.0, nlos_bias_mean=0.0, sigma_nlos=0.0,
                       shadow_sigma=0.0, vo_r_sigma0=0.0, vo_theta_sigma0=0.0,
                       m_noise_fraction=0.0)


@dataclass(frozen=True)
class Rates:
    rf_hz: float = 15.0
    vo_hz: float = 15.0

    def __post_init__(self):
        if self.rf_hz <= 0 or self.vo_hz <= 0:
            raise ValidationError("rates must be positive", path="rates")
        # VO is resampled onto the RF epoch clock
        if self.vo_hz != self.rf_hz:
            raise ValidationError(
                f"vo_hz ({self.vo_hz}) must equal rf_hz ({self.rf_hz}); streams share one epoch clock",
                path="rates.vo_hz",
            )

    def to_dict(self):
        return {"rf_hz": self.rf_hz, "vo_hz": self.vo_hz}


@dataclass(frozen=True)
class RfEntry:
    anchor_id: int
    range: float
    power: float
    los: bool

    def to_dict(self):
        return {"id": self.anchor_id, "range": self.range, "power": self.power, "los": self.los}


@dataclass(frozen=True)
class RfSample:
    """One UWB epoch: range and received power to every anchor"""

    t: float
    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(sorted(self.entries, key=lambda e: e.anchor_id)))
        for entry in self.entries:
            if not entry.range > 0:
                raise ValidationError(f"range must be > 0, got {entry.range}",
                                      path=f"rf[{entry.anchor_id}].range")

    def ranges(self):
        return np.array([e.range for e in self.entries], dtype=float)

    def powers(self):
        return np.array([e.power for e in self.entries], dtype=float)

    def entry(self, anchor_id):
        for e in self.entries:
            if e.anchor_id == anchor_id:
                return e
        raise ValidationError(f"no entry for anchor {anchor_id}")


@dataclass(frozen=True)
class VoSample:
    """One VO epoch: polar step (r, theta) and matching keypoint count"""

    t: float
    r: float
    theta: float
    m: int
    tracking_lost: bool = False

    def __post_init__(self):
        if not self.r >= 0:
            raise ValidationError(f"r must be >= 0, got {self.r}", path="vo.r")
        if self.m < 0:
            raise ValidationError(f"keypoints must be >= 0, got {self.m}", path="vo.m")

    def to_dict(self):
        return {"r": self.r, "theta": self.theta, "m": self.m, "lost": self.tracking_lost}


@dataclass(frozen=True)
class Trace:
    """One simulated run: ground truth plus per-epoch RF and VO samples"""

    scenario: str
    seed: int
    layout: AnchorLayout
    environment: Environment
    gt: Trajectory
    rf: tuple
    vo: tuple
    rates: Rates = field(default_factory=Rates)
    noise_model: NoiseModel = field(default_factory=NoiseModel)
    initial_heading: float = 0.0
    family: str = "default"

    def __post_init__(self):
        object.__setattr__(self, "rf", tuple(self.rf))
        object.__setattr__(self, "vo", tuple(self.vo))
        if not len(self.rf) == len(self.vo) == len(self.gt):
            raise ValidationError(
                f"stream lengths differ: {len(self.gt)} ground truth, {len(self.rf)} rf, {len(self.vo)} vo"
            )
        start, end = self.gt.span()
        for sample in self.rf + self.vo:
            if not start - 1e-9 <= sample.t <= end + 1e-9:
                raise ValidationError(f"sample at t={sample.t} outside ground-truth span")
        for sample in self.rf:
            if [e.anchor_id for e in sample.entries] != self.layout.ids:
                raise ValidationError(f"rf epoch t={sample.t} does not cover the anchor layout")

    def __len__(self):
        return len(self.rf)

    def rf_times(self):
        return np.array([s.t for s in self.rf], dtype=float)


@dataclass
class RunManifest:
    """Provenance record written next to every CLI artifact"""

    command: str
    config_path: Optional[str]
    seed: Optional[int]
    inputs: list
    outputs: list
    tool_version: str
    arguments: dict = field(default_factory=dict)
    wall_time: Optional[float] = None

    def to_dict(self):
        """Reproducible part only; wall time lives in a separate timing record"""
        return {
            "command": self.command,
            "config_path": self.config_path,
            "seed": self.seed,
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "tool_version": self.tool_version,
            "arguments": dict(self.arguments),
        }

    def __repr__(self):
        return f"<RunManifest {self.command} seed={self.seed} outputs={len(self.outputs)}>"
