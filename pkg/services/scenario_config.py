"""
Scenario config files (TOML): [scenario], [environment], [[anchors]],
[trajectory], [noise], [rates]
"""
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from models import Anchor, AnchorLayout, DimZone, Environment, NoiseModel, Position2D, Rates, Rect
from services.errors import ValidationError
from services.world_sim import ScenarioConfig, TrajectorySpec

logger = logging.getLogger(__name__)

SECTIONS = {"scenario", "environment", "anchors", "trajectory", "noise", "rates"}
TRAJECTORY_KEYS = set(TrajectorySpec.__dataclass_fields__)


def _as_float(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"expected a number, got {value!r}", path=path)
    return float(value)


def _number(data, key, path, default=None):
    if key not in data:
        if default is None:
            raise ValidationError("missing required key", path=f"{path}.{key}")
        return default
    return _as_float(data[key], f"{path}.{key}")


def _integer(data, key, path, default=None):
    if key not in data:
        if default is None:
            raise ValidationError("missing required key", path=f"{path}.{key}")
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"expected an integer, got {value!r}", path=f"{path}.{key}")
    return value


def _numbers(values, path):
    if not isinstance(values, (list, tuple)):
        raise ValidationError(f"expected a list of numbers, got {values!r}", path=path)
    return tuple(_as_float(v, f"{path}[{i}]") for i, v in enumerate(values))


def _rect(value, path):
    try:
        return Rect.from_list(value)
    except (TypeError, ValueError) as e:
        raise ValidationError(str(e), path=path) from e


def scenario_from_dict(data, source="<config>"):
    """
    Build a ScenarioConfig from parsed TOML.

    Args:
        data (dict): parsed config
        source (str): file name, used in log messages

    Returns:
        ScenarioConfig: validated scenario
    """
    unknown = set(data) - SECTIONS
    if unknown:
        raise ValidationError(f"unknown sections {sorted(unknown)}", path=sorted(unknown)[0])

    meta = data.get("scenario", {})
    env_data = data.get("environment")
    if env_data is None:
        raise ValidationError("missing section", path="environment")
    if "bounds" not in env_data:
        raise ValidationError("missing required key", path="environment.bounds")
    environment = Environment(
        bounds=_rect(env_data["bounds"], "environment.bounds"),
        occluders=tuple(_rect(o, f"environment.occluders[{i}]")
                        for i, o in enumerate(env_data.get("occluders", []))),
        dim_zones=tuple(
            DimZone(_rect(z.get("rect"), f"environment.dim_zones[{i}].rect"),
                    _number(z, "keypoint_scale", f"environment.dim_zones[{i}]"))
            for i, z in enumerate(env_data.get("dim_zones", []))
        ),
    )

    anchors_data = data.get("anchors")
    if not anchors_data:
        raise ValidationError("missing section", path="anchors")
    anchors = []
    for i, item in enumerate(anchors_data):
        path = f"anchors[{i}]"
        anchors.append(Anchor(_integer(item, "id", path), Position2D(_number(item, "x", path), _number(item, "y", path))))
    layout = AnchorLayout(tuple(anchors))

    traj_data = dict(data.get("trajectory", {}))
    unknown = set(traj_data) - TRAJECTORY_KEYS
    if unknown:
        raise ValidationError("unknown key", path=f"trajectory.{sorted(unknown)[0]}")
    if "start" in traj_data:
        traj_data["start"] = _numbers(traj_data["start"], "trajectory.start")
    if "waypoints" in traj_data:
        waypoints = traj_data["waypoints"]
        if not isinstance(waypoints, list):
            raise ValidationError("expected a list of points", path="trajectory.waypoints")
        traj_data["waypoints"] = tuple(_numbers(p, f"trajectory.waypoints[{i}]")
                                       for i, p in enumerate(waypoints))
    if "speeds" in traj_data:
        traj_data["speeds"] = _numbers(traj_data["speeds"], "trajectory.speeds")
    trajectory = TrajectorySpec(**traj_data)

    noise = NoiseModel.from_dict(data.get("noise", {}))
    rates_data = data.get("rates", {})
    rf_hz = _number(rates_data, "rf_hz", "rates", default=15.0)
    rates = Rates(rf_hz=rf_hz, vo_hz=_number(rates_data, "vo_hz", "rates", default=rf_hz))

    config = ScenarioConfig(
        name=str(meta.get("name", source)),
        environment=environment,
        layout=layout,
        trajectory=trajectory,
        noise=noise,
        rates=rates,
        seed=_integer(meta, "seed", "scenario", default=0),
        family=str(meta.get("family", "default")),
    )
    logger.debug(f"Loaded scenario {config.name} from {source}")
    return config


def load_scenario_config(path):
    """Read and validate a scenario TOML file"""
    with open(path, "rb") as f:
        try:
            data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ValidationError(f"invalid TOML: {e}", path=str(path)) from e
    return scenario_from_dict(data, source=str(path))
