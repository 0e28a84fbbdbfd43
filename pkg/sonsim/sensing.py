"""Field-of-view sensing and the local communication channel.

sonsim.sensing
~~~~~~~~~~~~~~

Aerial robots look down through a square footprint and see ground robots and
environmental features below them. Ground robots have no upward sensor and
aerial robots cannot see each other; both learn about the rest through
relayed observations (:func:`sonsim.vehicles.virtual_sense`).

Two robots can exchange a message only if, at send time, one senses the other
(directly or virtually) or an unexpired link joins them. Messages arrive one
tick after they were sent.

"""
import collections
import dataclasses
import logging
import math
import typing as t

import numpy as np

from .config import SensingSettings
from .core import AERIAL, GROUND, RobotId, RobotType, SensedFeature, SensedNeighbor
from .geometry import (
    UnitQuat,
    Vec3,
    hamilton,
    quat_inverse,
    rotate_vector,
    vec3,
    yaw_quat,
)
from .protocol import Message
from .vehicles import Relay

if t.TYPE_CHECKING:
    from .world import Obstacle, World

logger = logging.getLogger(__name__)

VisiblePairs = t.Set[t.FrozenSet[RobotId]]


class Body(t.NamedTuple):
    """Ground-truth pose of a robot, known to the world only."""

    robot_id: RobotId
    robot_type: RobotType
    position: Vec3
    yaw: float


class FovModel:

    """Downward-facing square field of view of an aerial robot.

    The footprint at depth ``h`` below the camera is a square of half-width
    ``h·tan(half_angle)`` aligned with the robot's heading.

    Examples
    --------
    >>> fov = FovModel(45.0)
    >>> round(fov.footprint_half_width(1.5), 9)
    1.5
    >>> fov.sees(vec3(0, 0, 1.5), 0.0, vec3(1.0, -1.0, 0.0))
    True
    >>> fov.sees(vec3(0, 0, 1.5), 0.0, vec3(2.0, 0.0, 0.0))
    False
    >>> fov.sees(vec3(0, 0, 1.5), 0.0, vec3(0.0, 0.0, 2.0))
    False
    """

    def __init__(self, half_angle_deg: float = 45.0) -> None:
        self.half_angle_deg = half_angle_deg

    @property
    def half_angle(self) -> float:
        return math.radians(self.half_angle_deg)

    def footprint_half_width(self, depth: float) -> float:
        return max(depth, 0.0) * math.tan(self.half_angle)

    def sees(
        self, observer: Vec3, yaw: float, target: Vec3, slack: float = 0.0
    ) -> bool:
        depth = float(observer[2] - target[2])
        if depth <= 0.0:
            return False
        rel = rotate_vector(yaw_quat(-yaw), np.asarray(target) - np.asarray(observer))
        half = self.footprint_half_width(depth) + slack
        return abs(float(rel[0])) <= half and abs(float(rel[1])) <= half


class Observation(t.NamedTuple):
    robots: t.List[SensedNeighbor]
    features: t.List[SensedFeature]


class Sensor:

    """Noisy geometric observer shared by all aerial robots of a world."""

    def __init__(self, settings: SensingSettings, rng: np.random.Generator) -> None:
        self.settings = settings
        self.fov = FovModel(settings.fov_half_angle_deg)
        self.rng = rng

    def _noisy(self, d: Vec3, q: UnitQuat) -> t.Tuple[Vec3, UnitQuat]:
        s = self.settings
        if s.sigma_pos > 0.0:
            d = d + self.rng.normal(0.0, s.sigma_pos, 3)
        if s.sigma_ang_deg > 0.0:
            error = math.radians(self.rng.normal(0.0, s.sigma_ang_deg))
            q = hamilton(q, yaw_quat(error))
        return d, q

    def relative(
        self, observer: Body, position: Vec3, yaw: float
    ) -> t.Tuple[Vec3, UnitQuat]:
        """Exact pose of ``(position, yaw)`` in the observer's frame."""
        to_own = quat_inverse(yaw_quat(observer.yaw))
        d = rotate_vector(to_own, np.asarray(position) - observer.position)
        return d, hamilton(to_own, yaw_quat(yaw))

    def sees_obstacle(self, observer: Body, obstacle: "Obstacle") -> bool:
        nadir = observer.position.copy()
        nadir[2] = float(obstacle.p[2])
        closest = obstacle.closest_point(nadir)
        return self.fov.sees(observer.position, observer.yaw, closest)

    def observe(
        self,
        observer: Body,
        bodies: t.Sequence[Body],
        obstacles: t.Sequence["Obstacle"] = (),
    ) -> Observation:
        """Everything an aerial robot sees, in its own frame.

        Ground robots see nothing directly.
        """
        if observer.robot_type != AERIAL:
            return Observation([], [])
        robots = []
        for body in bodies:
            if body.robot_id == observer.robot_id or body.robot_type != GROUND:
                continue
            if not self.fov.sees(observer.position, observer.yaw, body.position):
                continue
            d, q = self._noisy(*self.relative(observer, body.position, body.yaw))
            robots.append(SensedNeighbor(body.robot_id, body.robot_type, d, q))
        features = []
        for obstacle in obstacles:
            if not self.sees_obstacle(observer, obstacle):
                continue
            d, q = self._noisy(*self.relative(observer, obstacle.p, obstacle.yaw))
            features.append(obstacle.as_feature(d, q))
        return Observation(robots, features)


def relays_from(observer: Body, observation: Observation, step: int) -> t.List[Relay]:
    """Observations an aerial robot passes on to the ground robots it sees."""
    if observer.robot_type != AERIAL or not observation.robots:
        return []
    relays = [
        Relay(
            observer.robot_id,
            AERIAL,
            n.robot_id,
            "robot",
            n.d,
            n.q,
            step,
            subject_type=n.robot_type,
        )
        for n in observation.robots
    ]
    relays.extend(
        Relay(
            observer.robot_id,
            AERIAL,
            f.feature_id,
            "feature",
            f.d,
            f.q,
            step,
            feature=f,
        )
        for f in observation.features
    )
    return relays


def visible_set(world: "World", robot_id: RobotId) -> Observation:
    """What ``robot_id`` senses this tick, directly and virtually."""
    return world.sensed.get(robot_id, Observation([], []))


def visibility_pairs(
    sensed: t.Mapping[RobotId, t.Sequence[SensedNeighbor]],
    links: t.Iterable[t.Tuple[RobotId, RobotId]] = (),
) -> VisiblePairs:
    """Unordered robot pairs that may talk.

    >>> from sonsim.geometry import quat_identity
    >>> n = SensedNeighbor(2, GROUND, vec3(), quat_identity())
    >>> sorted(map(sorted, visibility_pairs({1: [n]}, [(3, 4)])))
    [[1, 2], [3, 4]]
    """
    pairs: VisiblePairs = set()
    for owner, neighbours in sensed.items():
        for n in neighbours:
            pairs.add(frozenset((owner, n.robot_id)))
    for a, b in links:
        pairs.add(frozenset((a, b)))
    return pairs


@dataclasses.dataclass
class ChannelState:

    """Messages in flight and the traffic tallies.

    Deliverability is decided when a message is sent; a message is delivered
    at the next tick if its receiver is still alive.
    """

    pending: t.Dict[int, t.List[Message]] = dataclasses.field(default_factory=dict)
    bytes_in: t.Counter[RobotId] = dataclasses.field(
        default_factory=collections.Counter
    )
    bytes_out: t.Counter[RobotId] = dataclasses.field(
        default_factory=collections.Counter
    )
    delivered: t.Counter[str] = dataclasses.field(default_factory=collections.Counter)
    dropped: t.Counter[str] = dataclasses.field(default_factory=collections.Counter)
    blackout_until: int = -1

    @property
    def total_bytes(self) -> int:
        return sum(self.bytes_in.values()) + sum(self.bytes_out.values())

    @property
    def dropped_total(self) -> int:
        return sum(self.dropped.values())

    def blackout(self, step: int, steps: int) -> None:
        self.blackout_until = max(self.blackout_until, step + steps - 1)
        logger.info("communication blackout until step %d", self.blackout_until)

    def in_blackout(self, step: int) -> bool:
        return step <= self.blackout_until

    def route(
        self,
        step: int,
        outboxes: t.Mapping[RobotId, t.Sequence[Message]],
        visible: VisiblePairs,
    ) -> int:
        """Queue deliverable messages sent at ``step``; returns the drop count."""
        queue = self.pending.setdefault(step + 1, [])
        drops = 0
        blacked_out = self.in_blackout(step)
        for sender in sorted(outboxes):
            for message in outboxes[sender]:
                pair = frozenset((message.sender, message.receiver))
                if blacked_out or pair not in visible:
                    self.dropped[message.kind] += 1
                    drops += 1
                    continue
                queue.append(message)
        return drops

    def deliver(
        self, step: int, alive: t.Container[RobotId]
    ) -> t.Dict[RobotId, t.List[Message]]:
        inboxes: t.Dict[RobotId, t.List[Message]] = collections.defaultdict(list)
        for message in self.pending.pop(step, []):
            if message.receiver not in alive:
                self.dropped[message.kind] += 1
                continue
            size = message.nbytes
            self.bytes_out[message.sender] += size
            self.bytes_in[message.receiver] += size
            self.delivered[message.kind] += 1
            inboxes[message.receiver].append(message)
        return dict(inboxes)


def route(
    channel: ChannelState,
    outboxes: t.Mapping[RobotId, t.Sequence[Message]],
    visible: VisiblePairs,
    step: int,
) -> ChannelState:
    """Queue the outboxes of ``step`` for delivery at ``step + 1``.

    Examples
    --------
    >>> ch = ChannelState()
    >>> m = Message("Expel", 1, 2, {"reason": "leave"})
    >>> _ = route(ch, {1: [m]}, {frozenset((1, 2))}, step=0)
    >>> ch.deliver(0, {1, 2})
    {}
    >>> [x.kind for x in ch.deliver(1, {1, 2})[2]]
    ['Expel']
    >>> ch.bytes_in[2] + ch.bytes_out[1] == 2 * m.nbytes
    True
    """
    channel.route(step, outboxes, visible)
    return channel


__all__ = [
    "Body",
    "ChannelState",
    "FovModel",
    "Observation",
    "Sensor",
    "relays_from",
    "route",
    "visibility_pairs",
    "visible_set",
]
