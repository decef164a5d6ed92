import pathlib

import numpy as np
import pytest

from racestack.mpcc import MpccConfig
from racestack.simulation import builtin_data_path
from racestack.track import load_track
from racestack.vehicle import load_vehicle_params

SCENARIO_DIR = pathlib.Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture(scope="session")
def params():
    return load_vehicle_params(builtin_data_path("vehicle_params.json"))


@pytest.fixture(scope="session")
def oval():
    return load_track(builtin_data_path("demo_oval_centerline.csv"))


@pytest.fixture
def config():
    return MpccConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
