from models import Anchor, AnchorLayout, Environment, NoiseModel, Position2D, Rect
from services.world_sim import ScenarioConfig, TrajectorySpec

OFFICE_ANCHORS = [(1, 0.5, 0.5), (2, 19.5, 0.5), (3, 19.5, 13.5), (4, 0.5, 13.5), (5, 10.0, 13.5)]


def make_layout(points):
    return AnchorLayout(tuple(Anchor(i, Position2D(x, y)) for i, x, y in points))


def make_config(noise=None, occluders=(), dim_zones=(), trajectory=None, name="unit", seed=1,
                family="office"):
    """20 x 14 m office with five wall-mounted anchors and a rectangular walk"""
    return ScenarioConfig(
        name=name,
        environment=Environment(Rect(0.0, 0.0, 20.0, 14.0), occluders=occluders, dim_zones=dim_zones),
        layout=make_layout(OFFICE_ANCHORS),
        trajectory=trajectory or TrajectorySpec(
            shape="rectangle", start=(3.0, 3.0), width=14.0, height=8.0, speed=1.2, duration=20.0
        ),
        noise=noise or NoiseModel(),
        seed=seed,
        family=family,
    )
