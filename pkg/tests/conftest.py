import textwrap

import pytest

from models import DimZone, NoiseModel, Rect
from services.world_sim import run_scenario
from tests.helpers import OFFICE_ANCHORS, make_config, make_layout


@pytest.fixture
def square_layout():
    return make_layout([(1, 0.0, 0.0), (2, 10.0, 0.0), (3, 10.0, 10.0), (4, 0.0, 10.0)])


@pytest.fixture
def office_layout():
    return make_layout(OFFICE_ANCHORS)


@pytest.fixture(scope="session")
def noise_free_trace():
    return run_scenario(make_config(noise=NoiseModel().zero_noise(), name="noise_free"))


@pytest.fixture(scope="session")
def practical_trace():
    config = make_config(
        occluders=(Rect(8.5, 5.0, 11.5, 9.0),),
        dim_zones=(DimZone(Rect(2.0, 8.5, 8.0, 12.5), 0.25),),
        name="practical",
        seed=7,
    )
    return run_scenario(config)


@pytest.fixture
def tiny_model():
    """Architecture overrides that keep training fast in unit tests"""
    return {"channels": [4, 8], "hidden": 12, "layers": 2, "fc_hidden": 8}


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(textwrap.dedent("""
        [scenario]
        name = "tiny"
        family = "office"

        [environment]
        bounds = [0.0, 0.0, 20.0, 14.0]
        occluders = [[8.5, 5.0, 11.5, 9.0]]

        [[anchors]]
        id = 1
        x = 0.5
        y = 0.5

        [[anchors]]
        id = 2
        x = 19.5
        y = 0.5

        [[anchors]]
        id = 3
        x = 19.5
        y = 13.5

        [[anchors]]
        id = 4
        x = 0.5
        y = 13.5

        [[anchors]]
        id = 5
        x = 10.0
        y = 13.5

        [trajectory]
        shape = "rectangle"
        start = [3.0, 3.0]
        width = 14.0
        height = 8.0
        speed = 1.2
        duration = 8.0
    """))
    return str(path)
