import pathlib

import numpy as np
import pytest

import hdlo
from hdlo import scene as sc

SCENES = pathlib.Path(hdlo.__file__).parent / "scenes"


def scene_path(name: str) -> str:
    return str(SCENES / f"{name}.yaml")


@pytest.fixture(scope="session")
def cantilever():
    return sc.load_scene(scene_path("cantilever"))


@pytest.fixture(scope="session")
def planar2r():
    return sc.load_scene(scene_path("planar2r"))


@pytest.fixture(scope="session")
def desk():
    return sc.load_scene(scene_path("desk"))


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
