"""Discrete-time world.

sonsim.world
~~~~~~~~~~~~

A :class:`World` owns the ground truth: the arena, obstacles, robot vehicles,
every robot's protocol state and the message channel. :meth:`World.tick`
advances it by one step in a fixed order:

1. scheduled faults
2. sensing, relays and virtual sensing
3. delivery of the messages sent last tick
4. the mission script
5. one protocol step per robot, then routing of the new messages
6. vehicle motion
7. collision resolution
8. the metrics snapshot

"""
import dataclasses
import logging
import math
import typing as t

import numpy as np

from . import exc
from .config import Settings
from .core import (
    AERIAL,
    AVOID_KINDS,
    FEATURE_KINDS,
    GROUND,
    NodeId,
    RobotId,
    RobotType,
    SensedFeature,
    SwarmTopology,
    TargetGraph,
)
from .geometry import (
    UnitQuat,
    Vec3,
    norm,
    rotate_vector,
    unit,
    vec3,
    yaw_quat,
)
from .metrics import RunLog
from .protocol import Message, RobotState, active_target, step_protocol
from .sensing import (
    Body,
    ChannelState,
    Observation,
    Sensor,
    VisiblePairs,
    relays_from,
    visibility_pairs,
)
from .vehicles import (
    FlightStabilizer,
    GroundRobot,
    KinematicAerial,
    Quadrotor,
    Relay,
    hold_altitude,
    virtual_sense,
)

if t.TYPE_CHECKING:
    from .missions import Scenario

    Vehicle = t.Union[GroundRobot, KinematicAerial, Quadrotor]

logger = logging.getLogger(__name__)

#: Position-projection passes per tick
COLLISION_PASSES = 3

SHAPES = ("disc", "box")
ARENA_SHAPES = ("rectangle", "octagon")
FAULT_KINDS = ("kill", "kill_random", "vision_blackout", "comm_blackout")


@dataclasses.dataclass
class Obstacle:

    """Cylinder (``disc``) or box in the arena.

    Only ``obstacle`` and ``wall`` kinds are solid; destinations, openings and
    landmarks are markers the robots can see.
    """

    obstacle_id: int
    p: Vec3
    kind: str = "obstacle"
    shape: str = "disc"
    yaw: float = 0.0
    radius: float = 0.0
    half_x: float = 0.0
    half_y: float = 0.0
    width: float = 0.0
    pushable: bool = False

    def __post_init__(self) -> None:
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.kind not in FEATURE_KINDS:
            raise exc.ConfigError(f"unknown obstacle kind {self.kind!r}")
        if self.shape not in SHAPES:
            raise exc.ConfigError(f"unknown obstacle shape {self.shape!r}")

    @classmethod
    def from_dict(cls, data: t.Mapping[str, t.Any], obstacle_id: int) -> "Obstacle":
        values = dict(data)
        p = values.pop("p", values.pop("position", (0.0, 0.0, 0.0)))
        p = list(map(float, p)) + [0.0] * (3 - len(p))
        yaw = math.radians(float(values.pop("yaw_deg", 0.0)))
        if "size" in values:
            sx, sy = map(float, values.pop("size"))
            values.setdefault("shape", "box")
            values["half_x"], values["half_y"] = sx / 2.0, sy / 2.0
        try:
            return cls(
                obstacle_id=int(values.pop("id", obstacle_id)),
                p=vec3(*p),
                yaw=float(values.pop("yaw", yaw)),
                **values,
            )
        except TypeError as e:
            raise exc.ConfigError(f"obstacle {obstacle_id}: {e}") from e

    @property
    def solid(self) -> bool:
        return self.kind in AVOID_KINDS

    @property
    def q(self) -> UnitQuat:
        return yaw_quat(self.yaw)

    def _local(self, point: Vec3) -> Vec3:
        rel = np.asarray(point, dtype=np.float64) - self.p
        rel[2] = 0.0
        return rotate_vector(yaw_quat(-self.yaw), rel)

    def closest_point(self, point: Vec3) -> Vec3:
        """Point of the footprint nearest to ``point``, at the obstacle's height."""
        if self.shape == "disc":
            rel = np.asarray(point, dtype=np.float64) - self.p
            rel[2] = 0.0
            dist = norm(rel)
            return self.p + unit(rel) * min(self.radius, dist)
        local = self._local(point)
        local[0] = np.clip(local[0], -self.half_x, self.half_x)
        local[1] = np.clip(local[1], -self.half_y, self.half_y)
        return self.p + rotate_vector(self.q, local)

    def penetration(self, center: Vec3, radius: float) -> t.Tuple[float, Vec3]:
        """Overlap depth of a disc with the footprint and the unit push-out normal.

        >>> box = Obstacle(0, vec3(0, 0, 0), shape="box", half_x=1.0, half_y=1.0)
        >>> depth, n = box.penetration(vec3(1.02, 0, 0), 0.035)
        >>> round(depth, 6), n.tolist()
        (0.015, [1.0, 0.0, 0.0])
        """
        if self.shape == "disc":
            rel = np.asarray(center, dtype=np.float64) - self.p
            rel[2] = 0.0
            dist = norm(rel)
            normal = unit(rel) if dist > 0.0 else vec3(1.0, 0.0, 0.0)
            return self.radius + radius - dist, normal
        local = self._local(center)
        inside = abs(local[0]) <= self.half_x and abs(local[1]) <= self.half_y
        if not inside:
            rel = np.asarray(center, dtype=np.float64) - self.closest_point(center)
            rel[2] = 0.0
            dist = norm(rel)
            return radius - dist, unit(rel)
        exit_x = self.half_x - abs(float(local[0]))
        exit_y = self.half_y - abs(float(local[1]))
        if exit_x <= exit_y:
            axis = vec3(1.0 if local[0] >= 0.0 else -1.0, 0.0, 0.0)
            depth = exit_x
        else:
            axis = vec3(0.0, 1.0 if local[1] >= 0.0 else -1.0, 0.0)
            depth = exit_y
        return depth + radius, rotate_vector(self.q, axis)

    def as_feature(self, d: Vec3, q: UnitQuat) -> SensedFeature:
        return SensedFeature(
            feature_id=self.obstacle_id,
            kind=self.kind,
            d=d,
            q=q,
            shape=self.shape,
            radius=self.radius,
            half_x=self.half_x,
            half_y=self.half_y,
            width=self.width,
        )


@dataclasses.dataclass(frozen=True)
class Arena:

    """Rectangle or octagon centred on the origin, bounded by hard walls.

    The octagon is the rectangle with its corners cut at 45° by ``cut``.

    Examples
    --------
    >>> a = Arena("octagon", 4.0, 4.0, cut=0.5)
    >>> a.contains(vec3(1.9, 0, 0)), a.contains(vec3(1.9, 1.9, 0))
    (True, False)
    >>> len(a.walls(100))
    8
    """

    shape: str = "rectangle"
    length: float = 10.0
    width: float = 10.0
    cut: float = 0.5
    thickness: float = 0.1

    def __post_init__(self) -> None:
        if self.shape not in ARENA_SHAPES:
            raise exc.ConfigError(f"unknown arena shape {self.shape!r}")

    def half_planes(self) -> t.List[t.Tuple[Vec3, float]]:
        """Outward unit normals ``n`` with offsets ``c``; inside is ``n·p ≤ c``."""
        hx, hy = self.length / 2.0, self.width / 2.0
        planes = [
            (vec3(1, 0, 0), hx),
            (vec3(-1, 0, 0), hx),
            (vec3(0, 1, 0), hy),
            (vec3(0, -1, 0), hy),
        ]
        if self.shape == "octagon":
            s = math.sqrt(0.5)
            offset = (hx + hy - self.cut) * s
            for sx in (1.0, -1.0):
                for sy in (1.0, -1.0):
                    planes.append((vec3(sx * s, sy * s, 0.0), offset))
        return planes

    def contains(self, p: Vec3, margin: float = 0.0) -> bool:
        return all(float(np.dot(n, p)) <= c - margin for n, c in self.half_planes())

    def clamp(self, p: Vec3, margin: float = 0.0) -> Vec3:
        out = np.array(p, dtype=np.float64)
        for _ in range(2):
            for n, c in self.half_planes():
                excess = float(np.dot(n, out)) - (c - margin)
                if excess > 0.0:
                    out = out - excess * n
        return out

    def walls(self, first_id: int) -> t.List[Obstacle]:
        """The boundary as thin box features, outside the free area."""
        hx, hy = self.length / 2.0, self.width / 2.0
        half = self.thickness / 2.0
        cut = self.cut if self.shape == "octagon" else 0.0
        specs = [
            (vec3(hx + half, 0, 0), 0.0, half, hy - cut),
            (vec3(-hx - half, 0, 0), 0.0, half, hy - cut),
            (vec3(0, hy + half, 0), 0.0, hx - cut, half),
            (vec3(0, -hy - half, 0), 0.0, hx - cut, half),
        ]
        if self.shape == "octagon":
            s = math.sqrt(0.5)
            diagonal = cut * math.sqrt(2.0) / 2.0
            for sx in (1.0, -1.0):
                for sy in (1.0, -1.0):
                    mid = vec3(sx * (hx - cut / 2.0), sy * (hy - cut / 2.0), 0.0)
                    mid = mid + vec3(sx * s, sy * s, 0.0) * half
                    yaw = math.atan2(sy, sx) + math.pi / 2.0
                    specs.append((mid, yaw, diagonal, half))
        return [
            Obstacle(
                first_id + k, p, kind="wall", shape="box", yaw=yaw, half_x=a, half_y=b
            )
            for k, (p, yaw, a, b) in enumerate(specs)
        ]


@dataclasses.dataclass(frozen=True)
class FaultEvent:

    """A scheduled fault.

    ``robot`` is a robot id or ``"brain"``, the brain of the largest SoNS at
    the time the fault fires.
    """

    kind: str
    step: int
    robot: t.Union[RobotId, str, None] = None
    probability: float = 0.0
    duration_s: float = 0.0
    robot_type: t.Optional[RobotType] = None

    def __post_init__(self) -> None:
        if self.kind not in FAULT_KINDS:
            raise exc.ConfigError(f"unknown fault kind {self.kind!r}")

    @classmethod
    def from_dict(cls, data: t.Mapping[str, t.Any], tick: float) -> "FaultEvent":
        values = dict(data)
        if "time_s" in values:
            values["step"] = int(round(float(values.pop("time_s")) / tick))
        try:
            return cls(**values)
        except TypeError as e:
            raise exc.ConfigError(f"fault: {e}") from e


class RobotSpec(t.NamedTuple):
    robot_id: RobotId
    robot_type: RobotType
    position: Vec3
    yaw: float = 0.0


@dataclasses.dataclass(frozen=True)
class RobotView:

    """What the metrics may know about one robot at one step."""

    robot_id: RobotId
    robot_type: RobotType
    position: Vec3
    yaw: float
    parent: t.Optional[RobotId]
    node: t.Optional[NodeId]
    #: the brain's active target graph, for brains only
    target: t.Optional[TargetGraph] = None
    target_version: int = 0
    ops: int = 0


@dataclasses.dataclass(frozen=True)
class WorldSnapshot:

    """Immutable view of one tick for the metrics."""

    step: int
    time: float
    robots: t.Mapping[RobotId, RobotView]
    topology: SwarmTopology
    bytes_in: int = 0
    bytes_out: int = 0
    dropped_msgs: int = 0
    n_dead: int = 0

    @property
    def n_robots(self) -> int:
        return len(self.robots)

    def largest_brain(self) -> t.Optional[RobotId]:
        components = self.topology.components()
        if not components:
            return None
        return self.topology.brain_of(min(components[0]))


class World:

    """The simulated arena and everything in it.

    Examples
    --------
    >>> w = World(Settings(), [])
    >>> w.tick().step
    1
    """

    def __init__(
        self,
        settings: Settings,
        robots: t.Sequence[RobotSpec],
        target: t.Optional[TargetGraph] = None,
        obstacles: t.Sequence[Obstacle] = (),
        arena: t.Optional[Arena] = None,
        faults: t.Sequence[FaultEvent] = (),
        scenario: t.Optional["Scenario"] = None,
    ) -> None:
        self.settings = settings
        self.scenario = scenario
        self.name = "" if scenario is None else scenario.name
        self.step = 0
        self.rng = np.random.default_rng(settings.seed)
        seeds = np.random.SeedSequence(settings.seed)
        sensor_seed, fault_seed = seeds.spawn(2)
        self.sensor = Sensor(settings.sensing, np.random.default_rng(sensor_seed))
        self.fault_rng = np.random.default_rng(fault_seed)
        self.arena = arena or Arena()
        self.obstacles: t.List[Obstacle] = list(obstacles)
        first_wall = max([o.obstacle_id for o in self.obstacles] + [999]) + 1
        self.walls = self.arena.walls(first_wall)
        self.faults = sorted(faults, key=lambda f: f.step)
        self.channel = ChannelState()
        self.vision_blackout_until = -1
        self.inboxes: t.Dict[RobotId, t.List[Message]] = {}
        self.sensed: t.Dict[RobotId, Observation] = {}
        self.relays: t.List[Relay] = []
        self.stabilizers: t.Dict[RobotId, FlightStabilizer] = {}
        self.landmarks: t.Dict[RobotId, RobotId] = {}
        self.commands: t.Dict[RobotId, t.Tuple[Vec3, Vec3]] = {}
        self.dead: t.Set[RobotId] = set()
        self.visible: VisiblePairs = set()
        self.log = RunLog(settings, name=self.name, seed=settings.seed)

        if target is None:
            n_aerial = sum(1 for r in robots if r.robot_type == AERIAL)
            n_ground = len(robots) - n_aerial
            target = (
                TargetGraph.lookup(n_aerial=n_aerial, n_ground=n_ground)
                if n_aerial
                else TargetGraph.single(GROUND)
            )
        self.target = target
        self.states: t.Dict[RobotId, RobotState] = {}
        self.vehicles: t.Dict[RobotId, "Vehicle"] = {}
        for spec in robots:
            self.add_robot(spec)

    @classmethod
    def from_scenario(cls, scenario: "Scenario") -> "World":
        world = cls(
            scenario.settings,
            scenario.robots,
            target=scenario.target,
            obstacles=[dataclasses.replace(o) for o in scenario.obstacles],
            arena=scenario.arena,
            faults=scenario.faults,
            scenario=scenario,
        )
        if scenario.script is not None:
            scenario.script.attach(world)
        logger.info(
            "scenario %s: %d robots, seed %d",
            scenario.name,
            len(scenario.robots),
            scenario.settings.seed,
        )
        return world

    def add_robot(self, spec: RobotSpec) -> None:
        if spec.robot_id in self.states or spec.robot_id in self.dead:
            raise exc.ConfigError(f"duplicate robot id {spec.robot_id}")
        s = self.settings
        rng = np.random.default_rng([s.seed, spec.robot_id])
        vehicle: "Vehicle"
        position = np.asarray(spec.position, dtype=np.float64).copy()
        if spec.robot_type == AERIAL:
            if len(spec.position) < 3 or position[2] == 0.0:
                position[2] = s.vehicles.altitude
            if s.vehicles.model == "full":
                vehicle = Quadrotor(position, spec.yaw, s.vehicles, rng)
            else:
                vehicle = KinematicAerial(
                    position, spec.yaw, s.vehicles, s.protocol.v_max(AERIAL)
                )
            if s.vehicles.stabilization:
                self.stabilizers[spec.robot_id] = FlightStabilizer(s.tick)
        else:
            vehicle = GroundRobot(position, spec.yaw, s.vehicles)
        self.vehicles[spec.robot_id] = vehicle
        self.states[spec.robot_id] = RobotState.create(
            spec.robot_id, spec.robot_type, self.target, s.protocol, rng=rng
        )

    @property
    def alive(self) -> t.List[RobotId]:
        return sorted(self.states)

    @property
    def time(self) -> float:
        return self.step * self.settings.tick

    def bodies(self) -> t.List[Body]:
        return [
            Body(
                r,
                self.states[r].robot_type,
                self.vehicles[r].position,
                self.vehicles[r].yaw,
            )
            for r in self.alive
        ]

    def features(self) -> t.List[Obstacle]:
        return self.obstacles + self.walls

    def topology(self) -> SwarmTopology:
        return SwarmTopology(
            {r: s.parent_id for r, s in self.states.items()},
            {r: list(s.children) for r, s in self.states.items()},
            {r: s.robot_type for r, s in self.states.items()},
        )

    def largest_brain(self) -> t.Optional[RobotState]:
        components = self.topology().components()
        if not components:
            return None
        root = self.topology().brain_of(min(components[0]))
        return self.states[root]

    def brains(self) -> t.List[RobotState]:
        return [s for r, s in sorted(self.states.items()) if s.is_brain]

    # faults

    def kill(self, robot_id: RobotId) -> None:
        """Permanent failure: ground robots stay as obstacles, aerial ones leave."""
        if robot_id not in self.states:
            return
        state = self.states.pop(robot_id)
        vehicle = self.vehicles.pop(robot_id)
        self.stabilizers.pop(robot_id, None)
        self.inboxes.pop(robot_id, None)
        self.dead.add(robot_id)
        if state.robot_type == GROUND:
            first = max(o.obstacle_id for o in self.features()) + 1
            self.obstacles.append(
                Obstacle(
                    first,
                    vehicle.position.copy(),
                    radius=self.settings.vehicles.ground_radius,
                )
            )
        logger.info("robot %d failed at step %d", robot_id, self.step)

    def apply_faults(self) -> None:
        while self.faults and self.faults[0].step <= self.step:
            fault = self.faults.pop(0)
            steps = max(1, int(round(fault.duration_s / self.settings.tick)))
            if fault.kind == "kill":
                victim = fault.robot
                if victim == "brain":
                    brain = self.largest_brain()
                    victim = None if brain is None else brain.robot_id
                if isinstance(victim, int):
                    self.kill(victim)
            elif fault.kind == "kill_random":
                for robot in self.alive:
                    if fault.robot_type not in (None, self.states[robot].robot_type):
                        continue
                    if self.fault_rng.random() < fault.probability:
                        self.kill(robot)
            elif fault.kind == "vision_blackout":
                self.vision_blackout_until = self.step + steps - 1
                logger.info("vision blackout until step %d", self.vision_blackout_until)
            else:
                self.channel.blackout(self.step, steps)

    # stages

    def sense(self) -> None:
        bodies = self.bodies()
        blind = self.step <= self.vision_blackout_until
        features = self.features()
        direct: t.Dict[RobotId, Observation] = {}
        relays: t.List[Relay] = []
        for body in bodies:
            if blind:
                direct[body.robot_id] = Observation([], [])
                continue
            direct[body.robot_id] = self.sensor.observe(body, bodies, features)
            if self.settings.sensing.relay:
                relays.extend(relays_from(body, direct[body.robot_id], self.step))
        self.relays = relays
        self.sensed = {}
        for body in bodies:
            observation = direct[body.robot_id]
            robots, relayed = virtual_sense(
                body.robot_id, body.robot_type, observation.robots, relays, self.step
            )
            if body.robot_type == AERIAL:
                self.sensed[body.robot_id] = Observation(robots, observation.features)
            else:
                self.sensed[body.robot_id] = Observation(robots, relayed)

    def links(self) -> t.List[t.Tuple[RobotId, RobotId]]:
        ceiling = self.settings.protocol.staleness_ceiling
        pairs = []
        for robot, state in self.states.items():
            if state.parent is not None and not state.parent.expired(ceiling):
                pairs.append((robot, state.parent.parent))
            for child, record in state.children.items():
                if not record.link.expired(ceiling):
                    pairs.append((robot, child))
        return pairs

    def run_protocol(self) -> None:
        outboxes: t.Dict[RobotId, t.List[Message]] = {}
        self.commands = {}
        for robot in self.alive:
            state = self.states[robot]
            state.yaw = self.vehicles[robot].compass
            observation = self.sensed.get(robot, Observation([], []))
            state, out, command = step_protocol(
                state,
                self.inboxes.get(robot, []),
                observation.robots,
                observation.features,
            )
            self.states[robot] = state
            outboxes[robot] = out
            self.commands[robot] = command
        self.visible = visibility_pairs(
            {r: o.robots for r, o in self.sensed.items()}, self.links()
        )
        self.channel.route(self.step, outboxes, self.visible)

    def _stabilize(self, robot: RobotId, v: Vec3, omega: Vec3) -> t.Tuple[Vec3, Vec3]:
        observation = self.sensed.get(robot, Observation([], []))
        objects = {
            f.feature_id: (f.d, f.q)
            for f in observation.features
            if f.kind in ("obstacle", "landmark")
        }
        robots = {
            n.robot_id: (n.d, n.q)
            for n in observation.robots
            if n.robot_type == GROUND and not n.virtual
        }
        v, omega, landmark = self.stabilizers[robot].adjust(objects, robots, v, omega)
        previous = self.landmarks.pop(robot, None)
        messages = []
        if previous is not None and previous != landmark:
            messages.append(
                Message("StabilizationOverride", robot, previous, {"active": False})
            )
        if landmark is not None:
            self.landmarks[robot] = landmark
            messages.append(
                Message(
                    "StabilizationOverride",
                    robot,
                    landmark,
                    {"active": True, "v": v, "omega": omega},
                )
            )
        if messages:
            self.channel.route(self.step, {robot: messages}, self.visible)
        return v, omega

    def move(self) -> None:
        tick = self.settings.tick
        altitude = self.settings.vehicles.altitude
        for robot in self.alive:
            v, omega = self.commands.get(robot, (vec3(), vec3()))
            vehicle = self.vehicles[robot]
            if isinstance(vehicle, GroundRobot):
                vehicle.step(v, omega, tick)
                continue
            if robot in self.stabilizers:
                v, omega = self._stabilize(robot, v, omega)
            v_world = rotate_vector(yaw_quat(vehicle.compass), np.asarray(v))
            v_world[2] = hold_altitude(vehicle.position, altitude)
            vehicle.step(v_world, float(omega[2]), tick)

    def resolve_collisions(self) -> None:
        """Push ground robots apart and out of solid obstacles.

        Pushable obstacles are moved instead of the robot, except in the last
        pass, which treats everything as fixed.
        """
        radius = self.settings.vehicles.ground_radius
        ground = [
            v for r, v in sorted(self.vehicles.items()) if isinstance(v, GroundRobot)
        ]
        solid = [o for o in self.features() if o.solid]
        for k in range(COLLISION_PASSES):
            final = k == COLLISION_PASSES - 1
            for i, a in enumerate(ground):
                for b in ground[i + 1 :]:
                    gap = b.position - a.position
                    gap[2] = 0.0
                    dist = norm(gap)
                    overlap = 2.0 * radius - dist
                    if overlap <= 0.0:
                        continue
                    n = unit(gap) if dist > 0.0 else vec3(1.0, 0.0, 0.0)
                    a.position = a.position - n * overlap / 2.0
                    b.position = b.position + n * overlap / 2.0
            for robot in ground:
                for obstacle in solid:
                    depth, n = obstacle.penetration(robot.position, radius)
                    if depth <= 0.0:
                        continue
                    if obstacle.pushable and not final:
                        extent = max(obstacle.radius, obstacle.half_x, obstacle.half_y)
                        obstacle.p = self.arena.clamp(obstacle.p - n * depth, extent)
                    else:
                        robot.position = robot.position + n * depth
                robot.position = self.arena.clamp(robot.position, radius)

    def snapshot(self) -> WorldSnapshot:
        views = {}
        for robot, state in sorted(self.states.items()):
            vehicle = self.vehicles[robot]
            views[robot] = RobotView(
                robot_id=robot,
                robot_type=state.robot_type,
                position=np.array(vehicle.position),
                yaw=vehicle.yaw,
                parent=state.parent_id,
                node=state.node,
                target=active_target(state) if state.is_brain else None,
                target_version=state.target_version,
                ops=state.counters.ops,
            )
        return WorldSnapshot(
            step=self.step,
            time=self.time,
            robots=views,
            topology=self.topology(),
            bytes_in=sum(self.channel.bytes_in.values()),
            bytes_out=sum(self.channel.bytes_out.values()),
            dropped_msgs=self.channel.dropped_total
            + sum(s.counters.dropped_msgs for s in self.states.values()),
            n_dead=len(self.dead),
        )

    def tick(self) -> "World":
        self.apply_faults()
        self.sense()
        self.inboxes = self.channel.deliver(self.step, set(self.states))
        if self.scenario is not None and self.scenario.script is not None:
            self.scenario.script.apply(self)
        self.run_protocol()
        self.move()
        self.resolve_collisions()
        self.step += 1
        self.log.record(self.snapshot())
        logger.debug("tick %d done", self.step)
        return self

    def success(self) -> bool:
        return self.scenario is not None and self.scenario.success(self)

    def failure(self) -> bool:
        return self.scenario is not None and self.scenario.failure(self)

    def run(self, max_steps: t.Optional[int] = None) -> RunLog:
        """Tick until success, failure or the step budget."""
        budget = self.settings.budget_steps if max_steps is None else max_steps
        if self.scenario is not None and max_steps is None:
            budget = self.scenario.budget_steps
        outcome = "budget"
        while self.step < budget:
            self.tick()
            if self.success():
                outcome = "success"
                break
            if self.failure():
                outcome = "failure"
                break
        self.log.finish(outcome, self.step)
        logger.info("%s ended with %s at step %d", self.name, outcome, self.step)
        return self.log


__all__ = [
    "Arena",
    "FaultEvent",
    "Obstacle",
    "RobotSpec",
    "RobotView",
    "World",
    "WorldSnapshot",
]
