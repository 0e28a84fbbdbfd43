"""Tests for sonsim.test."""
import pathlib

import pytest

from _pytest.monkeypatch import MonkeyPatch

from sonsim import test as helpers
from sonsim.core import TargetGraph
from sonsim.exc import StepBudgetExceeded
from sonsim.missions import Scenario
from sonsim.test import (
    namer,
    run_until,
    seeded_rng,
    snapshot_of,
    temp_output_dir,
    temp_world,
)
from sonsim.world import World


def test_run_until_stops_when_condition_holds(world: World) -> None:
    """run_until returns as soon as the predicate holds."""
    assert run_until(world, lambda w: w.step == 3)
    assert world.step == 3


def test_run_until_budget(world: World) -> None:
    with pytest.raises(StepBudgetExceeded, match="2 steps"):
        run_until(world, lambda w: False, steps=2)
    assert not run_until(world, lambda w: False, steps=2, raises=False)
    assert world.step == 4


def test_run_until_is_capped(world: World, monkeypatch: MonkeyPatch) -> None:
    """SONSIM_MAX_STEPS caps the steps taken."""
    monkeypatch.setattr(helpers, "SONSIM_MAX_STEPS", 3)
    assert not run_until(world, lambda w: False, steps=100, raises=False)
    assert world.step == 3


def test_snapshot_of_places_robots_on_nodes(target: TargetGraph) -> None:
    snap = snapshot_of(target, {0: (0, 0, 1.5), 1: (1, 0, 0)}, step=7)
    assert snap.step == 7
    assert snap.robots[0].target is target
    assert snap.robots[1].parent == 0
    assert snap.topology.children == {0: [1]}
    assert snap.largest_brain() == 0


def test_temp_world(scenario: Scenario) -> None:
    with temp_world(scenario) as w:
        w.tick()
        assert w.step == 1
        assert len(w.alive) == len(scenario.robots)


def test_temp_output_dir_is_removed() -> None:
    """temp_output_dir removes the directory on exit."""
    with temp_output_dir() as out:
        assert out.is_dir()
        assert out.name.startswith(helpers.TEST_OUTPUT_PREFIX)
        (out / "run.csv").write_text("")
        kept = pathlib.Path(out)
    assert not kept.exists()


def test_seeded_rng_is_repeatable() -> None:
    assert seeded_rng(5).integers(1000) == seeded_rng(5).integers(1000)
    assert seeded_rng(5).random() != seeded_rng(6).random()


def test_namer() -> None:
    names = {next(namer) for _ in range(5)}
    assert len(names) == 5
    assert all(len(n) == 8 for n in names)
