import logging
import os
import pathlib
import typing as t

import numpy as np
import pytest

from _pytest.doctest import DoctestItem
from _pytest.fixtures import SubRequest
from _pytest.monkeypatch import MonkeyPatch

from sonsim.config import Settings
from sonsim.core import TargetGraph
from sonsim.geometry import vec3
from sonsim.test import seeded_rng
from sonsim.world import Arena, RobotSpec, World

if t.TYPE_CHECKING:
    from sonsim.missions import Scenario

logger = logging.getLogger(__name__)

#: Variables a developer may set for the whole test session
KEEP_ENV = ("SONSIM_MAX_STEPS",)


@pytest.fixture(autouse=True)
def clear_env(monkeypatch: MonkeyPatch) -> None:
    """Drop SONSIM_ variables so a developer's scenario path or CSV separator
    does not leak into the tests."""
    for k in list(os.environ):
        if k.startswith("SONSIM_") and k not in KEEP_ENV:
            monkeypatch.delenv(k)


@pytest.fixture
def settings() -> Settings:
    return Settings(seed=1, budget_s=60.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return seeded_rng(0)


@pytest.fixture
def target() -> TargetGraph:
    """One aerial root over two ground robots."""
    return TargetGraph.lookup(1, 2)


@pytest.fixture(scope="function")
def world(request: SubRequest, settings: Settings, target: TargetGraph) -> World:
    """Three robots loosely around the target, in an empty 10 m octagon."""
    robots = [
        RobotSpec(0, "aerial", vec3(0.0, 0.0, 0.0)),
        RobotSpec(1, "ground", vec3(0.6, 0.9, 0.0)),
        RobotSpec(2, "ground", vec3(-0.7, -0.5, 0.0)),
    ]
    w = World(settings, robots, target=target, arena=Arena("octagon"))

    def fin() -> None:
        logger.debug("test world ended at step %d", w.step)

    request.addfinalizer(fin)
    return w


@pytest.fixture
def scenario() -> "Scenario":
    from sonsim.missions import mission_establishment

    return mission_establishment(n=4, seed=2)


@pytest.fixture
def out_dir(tmp_path: pathlib.Path) -> pathlib.Path:
    path = tmp_path / "out"
    path.mkdir()
    return path


@pytest.fixture(autouse=True)
def add_doctest_fixtures(
    request: SubRequest,
    doctest_namespace: t.Dict[str, t.Any],
) -> None:
    if isinstance(request._pyfuncitem, DoctestItem):
        doctest_namespace["np"] = np
        doctest_namespace["settings"] = request.getfixturevalue("settings")
        doctest_namespace["rng"] = request.getfixturevalue("rng")
        doctest_namespace["world"] = request.getfixturevalue("world")
        # Doctests were written against NumPy 1.x scalar reprs
        if int(np.__version__.split(".")[0]) >= 2:
            opts = np.get_printoptions()
            np.set_printoptions(legacy="1.25")
            request.addfinalizer(lambda: np.set_printoptions(**opts))
