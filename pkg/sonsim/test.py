"""Helper methods for sonsim tests and downstream experiments."""
import contextlib
import logging
import os
import pathlib
import random
import shutil
import tempfile
import typing as t

import numpy as np

from .core import SwarmTopology, TargetGraph
from .exc import StepBudgetExceeded
from .geometry import vec3
from .world import RobotView, World, WorldSnapshot

if t.TYPE_CHECKING:
    from .missions import Scenario

logger = logging.getLogger(__name__)

TEST_OUTPUT_PREFIX = "sonsim_"
#: Ceiling on the steps :func:`run_until` may take, whatever it is asked for
SONSIM_MAX_STEPS = int(os.getenv("SONSIM_MAX_STEPS", 5000))


class RandomStrSequence:
    def __init__(
        self, characters: str = "abcdefghijklmnopqrstuvwxyz0123456789_"
    ) -> None:
        self.characters: str = characters

    def __iter__(self) -> "RandomStrSequence":
        return self

    def __next__(self) -> str:
        return "".join(random.sample(self.characters, k=8))


namer = RandomStrSequence()


def seeded_rng(seed: int = 0) -> np.random.Generator:
    """Generator for test data, independent of any world's streams.

    >>> seeded_rng(3).random() == seeded_rng(3).random()
    True
    """
    return np.random.default_rng([seed, 0x50A5])


def run_until(
    world: World,
    predicate: t.Callable[[World], bool],
    steps: int = SONSIM_MAX_STEPS,
    *,
    raises: bool = True,
) -> bool:
    """
    Tick ``world`` until ``predicate(world)`` holds or the steps run out.

    Parameters
    ----------
    world : :class:`sonsim.World`
    predicate : callable
        checked after every tick
    steps : int
        most ticks to take. Capped by ``SONSIM_MAX_STEPS``.
    raises : bool
        raise :exc:`sonsim.exc.StepBudgetExceeded` instead of returning
        ``False``

    Examples
    --------
    >>> run_until(world, lambda w: w.step == 3)
    True
    >>> run_until(world, lambda w: False, steps=2)
    Traceback (most recent call last):
    ...
    sonsim.exc.StepBudgetExceeded: condition not met in 2 steps
    """
    budget = min(steps, SONSIM_MAX_STEPS)
    for _ in range(budget):
        world.tick()
        if predicate(world):
            return True
    if raises:
        raise StepBudgetExceeded(f"condition not met in {budget} steps")
    return False


def snapshot_of(
    target: TargetGraph,
    positions: t.Mapping[int, t.Sequence[float]],
    step: int = 0,
) -> WorldSnapshot:
    """A snapshot of robots sitting on the nodes of ``target``.

    Robot ids are the node ids, and every robot has its target parent.
    """
    views = {}
    parents = {}
    for node, p in positions.items():
        parent = target.parent(node)
        parents[node] = parent
        views[node] = RobotView(
            robot_id=node,
            robot_type=target.node_type(node),
            position=vec3(*p),
            yaw=0.0,
            parent=parent,
            node=node,
            target=target if parent is None else None,
        )
    children: t.Dict[int, t.List[int]] = {}
    for node, parent in parents.items():
        if parent is not None:
            children.setdefault(parent, []).append(node)
    topology = SwarmTopology(
        parents, children, {node: v.robot_type for node, v in views.items()}
    )
    return WorldSnapshot(step, 0.0, views, topology)


@contextlib.contextmanager
def temp_world(scenario: "Scenario") -> t.Generator[World, t.Any, t.Any]:
    """
    Return a context manager with a world built from ``scenario``.

    Examples
    --------
    >>> from sonsim.missions import mission_establishment
    >>> with temp_world(mission_establishment(n=2)) as w:
    ...     len(w.alive)
    2
    """
    world = World.from_scenario(scenario)
    try:
        yield world
    finally:
        logger.debug("dropping world of %s at step %d", scenario.name, world.step)


@contextlib.contextmanager
def temp_output_dir(
    prefix: str = TEST_OUTPUT_PREFIX,
) -> t.Generator[pathlib.Path, t.Any, t.Any]:
    """
    Return a context manager with a fresh directory for run logs.

    >>> with temp_output_dir() as out:
    ...     out.name.startswith("sonsim_")
    True
    """
    path = pathlib.Path(tempfile.mkdtemp(prefix=prefix + next(namer) + "_"))
    try:
        yield path
    finally:
        shutil.rmtree(path, ignore_errors=True)
