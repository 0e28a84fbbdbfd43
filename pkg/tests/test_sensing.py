"""Tests for sonsim.sensing."""
import math

import numpy as np
import pytest

from sonsim.config import SensingSettings
from sonsim.core import AERIAL, GROUND, SensedNeighbor
from sonsim.geometry import quat_identity, vec3, yaw_quat
from sonsim.protocol import Message
from sonsim.sensing import (
    Body,
    ChannelState,
    FovModel,
    Observation,
    Sensor,
    relays_from,
    route,
    visibility_pairs,
    visible_set,
)
from sonsim.test import seeded_rng
from sonsim.world import Obstacle, World


@pytest.fixture
def exact() -> Sensor:
    return Sensor(SensingSettings(sigma_pos=0.0, sigma_ang_deg=0.0), seeded_rng(0))


def test_footprint_follows_heading() -> None:
    """The square footprint turns with the robot's yaw."""
    fov = FovModel(45.0)
    corner = vec3(1.9, 0.0, 0.0)
    assert not fov.sees(vec3(0, 0, 1.5), 0.0, corner)
    assert fov.sees(vec3(0, 0, 1.5), math.pi / 4, corner)
    assert fov.sees(vec3(0, 0, 1.5), 0.0, corner, slack=0.5)


def test_narrow_fov_shrinks_footprint() -> None:
    assert FovModel(20.0).footprint_half_width(1.5) < 1.5
    assert FovModel(45.0).footprint_half_width(-1.0) == 0.0


def test_aerial_sees_ground_below_in_own_frame(exact: Sensor) -> None:
    observer = Body(0, AERIAL, vec3(0, 0, 1.5), math.pi / 2)
    bodies = [
        observer,
        Body(1, GROUND, vec3(1, 0, 0), 0.0),
        Body(2, AERIAL, vec3(0.5, 0, 1.5), 0.0),
        Body(3, GROUND, vec3(5, 0, 0), 0.0),
    ]
    seen = exact.observe(observer, bodies)
    assert [n.robot_id for n in seen.robots] == [1]
    assert np.allclose(seen.robots[0].d, [0.0, -1.0, -1.5])
    assert np.allclose(seen.robots[0].q, yaw_quat(-math.pi / 2))
    assert seen.features == []


def test_ground_robots_see_nothing(exact: Sensor) -> None:
    """Ground robots have no upward sensor."""
    observer = Body(1, GROUND, vec3(), 0.0)
    assert exact.observe(observer, [Body(0, AERIAL, vec3(0, 0, 1.5), 0.0)]) == (
        Observation([], [])
    )


def test_obstacle_seen_by_its_nearest_edge(exact: Sensor) -> None:
    """Obstacles are reported at their nearest point."""
    observer = Body(0, AERIAL, vec3(0, 0, 1.5), 0.0)
    near = Obstacle(40, vec3(2.2, 0, 0), radius=1.0)
    far = Obstacle(41, vec3(4.0, 0, 0), radius=1.0)
    seen = exact.observe(observer, [observer], [near, far])
    assert [f.feature_id for f in seen.features] == [40]
    feature = seen.features[0]
    assert feature.kind == "obstacle"
    assert feature.radius == 1.0
    assert np.allclose(feature.d, [2.2, 0.0, -1.5])


def test_noise_is_small_and_seeded() -> None:
    observer = Body(0, AERIAL, vec3(0, 0, 1.5), 0.0)
    bodies = [observer, Body(1, GROUND, vec3(0.5, 0.5, 0), 0.0)]
    a = Sensor(SensingSettings(), seeded_rng(7)).observe(observer, bodies)
    b = Sensor(SensingSettings(), seeded_rng(7)).observe(observer, bodies)
    d = a.robots[0].d
    assert not np.allclose(d, [0.5, 0.5, -1.5], atol=1e-9)
    assert np.allclose(d, [0.5, 0.5, -1.5], atol=0.1)
    assert np.array_equal(d, b.robots[0].d)


def test_relays_carry_robots_and_features(exact: Sensor) -> None:
    """Relays forward seen robots and features to ground robots."""
    observer = Body(0, AERIAL, vec3(0, 0, 1.5), 0.0)
    bodies = [observer, Body(1, GROUND, vec3(1, 0, 0), 0.0)]
    seen = exact.observe(observer, bodies, [Obstacle(40, vec3(0, 1, 0), radius=0.2)])
    relays = relays_from(observer, seen, step=12)
    assert [(r.kind, r.subject) for r in relays] == [("robot", 1), ("feature", 40)]
    assert all(r.step == 12 and r.observer == 0 for r in relays)
    assert relays[0].subject_type == GROUND
    assert relays[1].feature is not None


def test_no_relays_without_ground_robots(exact: Sensor) -> None:
    observer = Body(0, AERIAL, vec3(0, 0, 1.5), 0.0)
    seen = exact.observe(observer, [observer], [Obstacle(40, vec3(), radius=0.2)])
    assert relays_from(observer, seen, 0) == []
    assert relays_from(Body(1, GROUND, vec3(), 0.0), seen, 0) == []


def test_visibility_pairs_are_unordered() -> None:
    n = SensedNeighbor(2, GROUND, vec3(), quat_identity())
    back = SensedNeighbor(1, AERIAL, vec3(), quat_identity())
    pairs = visibility_pairs({1: [n], 2: [back]}, [(2, 1)])
    assert pairs == {frozenset((1, 2))}


def test_visible_set_reads_the_last_tick(world: World) -> None:
    """visible_set is what the robot sensed in the last tick."""
    assert visible_set(world, 0) == Observation([], [])
    world.tick()
    assert world.sensed
    for robot, observation in world.sensed.items():
        assert visible_set(world, robot) is observation
        assert robot not in {n.robot_id for n in observation.robots}
    assert visible_set(world, 99) == Observation([], [])


def test_undeliverable_messages_are_dropped() -> None:
    """Messages between robots that cannot see each other are dropped."""
    ch = ChannelState()
    ok = Message("Expel", 1, 2, {"reason": "leave"})
    unseen = Message("Expel", 1, 3, {"reason": "leave"})
    assert ch.route(0, {1: [ok, unseen]}, {frozenset((1, 2))}) == 1
    assert ch.dropped["Expel"] == 1
    assert [m.receiver for m in ch.deliver(1, {1, 2})[2]] == [2]
    assert ch.delivered["Expel"] == 1


def test_dead_receiver_drops_in_flight_message() -> None:
    ch = route(
        ChannelState(),
        {1: [Message("Expel", 1, 2, {"reason": "leave"})]},
        {frozenset((1, 2))},
        step=4,
    )
    assert ch.deliver(5, {1}) == {}
    assert ch.dropped_total == 1
    assert ch.total_bytes == 0


def test_comm_blackout() -> None:
    """Nothing is delivered during a communication blackout."""
    ch = ChannelState()
    ch.blackout(step=3, steps=2)
    assert ch.in_blackout(3) and ch.in_blackout(4)
    assert not ch.in_blackout(5)
    m = Message("Expel", 1, 2, {"reason": "leave"})
    visible = {frozenset((1, 2))}
    assert ch.route(4, {1: [m]}, visible) == 1
    assert ch.route(5, {1: [m]}, visible) == 0
    assert len(ch.deliver(6, {1, 2})[2]) == 1
