"""Missions, scenario files and batch experiments.

sonsim.missions
~~~~~~~~~~~~~~~

A :class:`Scenario` is everything needed to start a :class:`~sonsim.world.World`:
settings, robots, target graphs, obstacles, faults and a :class:`MissionScript`
that steers the brain and decides when the mission has succeeded.

Scenario files are YAML (see :mod:`sonsim.config`). Besides ``settings:`` they
may hold::

    name: sweep
    arena: {shape: octagon, length: 10, width: 10}
    swarm: {n: 8, layout: clustered}       # generated robots
    robots: [{id: 1, type: aerial, p: [0, 0]}]
    target: {lookup: {aerial: 2, ground: 6}}
    alt_targets: {line: {lookup: {layout: line}}}
    obstacles: [{kind: obstacle, p: [2, 0], radius: 0.2}]
    obstacle_field: {count: 12, radius: [0.1, 0.2], region: [1, -2, 5, 2]}
    barrier: {x: 2.5, widths: [2.0, 1.0]}
    faults: [{kind: kill, robot: brain, time_s: 20}]
    script: {kind: sweep, heading_deg: 0}

"""
import concurrent.futures
import dataclasses
import logging
import math
import pathlib
import typing as t

import numpy as np
import yaml

from . import exc, formats
from .config import (
    Settings,
    Sources,
    line_of,
    load_scenario_data,
    resolve_scenario,
    settings_from_dict,
)
from .core import AERIAL, GROUND, RobotId, SensedFeature, TargetGraph
from .geometry import Vec3, norm, rotate_vector, unit, vec3, yaw_quat, zeros3
from .metrics import RunLog, read_summaries, write_summaries
from .protocol import RobotState, active_target, promote, set_brain_target
from .world import Arena, FaultEvent, Obstacle, RobotSpec, World

logger = logging.getLogger(__name__)

#: Top-level keys a scenario file may use
SCENARIO_KEYS = {
    "name",
    "description",
    "settings",
    "arena",
    "swarm",
    "robots",
    "target",
    "alt_targets",
    "obstacles",
    "obstacle_field",
    "barrier",
    "faults",
    "script",
}

LAYOUTS = ("clustered", "scattered", "grid")

#: Stream index of the layout generator, next to the world's seed
LAYOUT_STREAM = 7

#: Closest two generated robots of the same type may start
MIN_SEPARATION = {AERIAL: 0.6, GROUND: 0.15}

RunSummary = t.Dict[str, t.Any]

#: Columns of batch summary files
BATCH_SUMMARY = formats.BATCH_COLUMNS + formats.RUN_SUMMARY_COLUMNS


def _heading(deg: float) -> Vec3:
    rad = math.radians(deg)
    return vec3(math.cos(rad), math.sin(rad), 0.0)


def _to_world(state: RobotState, d: Vec3) -> Vec3:
    """Planar direction of ``d``, seen by ``state``, in the world frame."""
    v = rotate_vector(yaw_quat(state.yaw), np.asarray(d, dtype=np.float64))
    v[2] = 0.0
    return unit(v) if norm(v) > 0.0 else zeros3()


def _features(state: RobotState, kind: str) -> t.List[SensedFeature]:
    return [f for _, f in sorted(state.features.items()) if f.kind == kind]


def drive(world: World, commands: t.Mapping[RobotId, Vec3]) -> None:
    """Give brains their world-frame velocity; all other brains hold still."""
    for robot, state in world.states.items():
        state.script_v = np.array(commands.get(robot, zeros3()), dtype=np.float64)


def passage_width(state: RobotState, heading: Vec3) -> float:
    """Width of the passage ahead from the wall features ``state`` knows.

    Each wall's closest point is projected on the axis across ``heading``;
    the nearest wall on either side bounds the passage. Returns ``inf`` when a
    side has no wall.
    """
    forward = rotate_vector(yaw_quat(-state.yaw), heading)
    forward[2] = 0.0
    forward = unit(forward)
    lateral = vec3(-forward[1], forward[0], 0.0)
    left = right = math.inf
    for feature in _features(state, "wall"):
        dist, toward = feature.clearance()
        point = dist * toward
        across = float(np.dot(point, lateral))
        along = float(np.dot(point, forward))
        if abs(across) <= abs(along):
            continue
        if across > 0.0:
            left = min(left, across)
        else:
            right = min(right, -across)
    return left + right


@dataclasses.dataclass
class MissionScript:

    """Scripted goals of the brain; subclasses implement one mission each.

    :meth:`apply` runs once per tick, after messages are delivered and before
    the protocol step. :meth:`attach` resets the run state for a new world.
    """

    kind: t.ClassVar[str] = "none"

    def attach(self, world: World) -> None:
        pass

    def apply(self, world: World) -> None:
        pass

    def success(self, world: World) -> bool:
        return False

    def failure(self, world: World) -> bool:
        return False


@dataclasses.dataclass
class EstablishmentScript(MissionScript):

    """No goals: the swarm only has to organise itself into the target graph.

    Brains of incomplete SoNSs that stop finding peers wander when ``wander``.
    """

    kind: t.ClassVar[str] = "establishment"
    wander: bool = True

    def attach(self, world: World) -> None:
        for state in world.states.values():
            state.wander = self.wander

    def success(self, world: World) -> bool:
        return (
            world.log.converged_step is not None
            and len(world.topology().components()) == 1
        )


@dataclasses.dataclass
class ObstacleFieldScript(MissionScript):

    """Once the SoNS has converged, head through an obstacle field and stop
    at the destination.

    Succeeds when the destination is reached with the error back within
    ``e_tolerance`` of its level before the field; fails on more than
    ``max_breaks`` link breaks.
    """

    kind: t.ClassVar[str] = "obstacle_field"
    heading_deg: float = 0.0
    speed: t.Optional[float] = None
    destination: t.Optional[int] = None
    stop_radius: float = 0.5
    e_tolerance: float = 0.3
    max_breaks: int = 0
    wait_steps: int = 500

    def attach(self, world: World) -> None:
        self.moving = False
        self.reached = False
        self.pre_E: t.Optional[float] = None
        self.breaks = 0
        self._sons = 1

    def _start(self, world: World) -> bool:
        if world.log.converged_step is None and world.step < self.wait_steps:
            return False
        self.moving = True
        self.pre_E = world.log.samples[-1].E if world.log.samples else 0.0
        self._sons = len(world.topology().components())
        logger.info("%s: heading out at step %d", world.name, world.step)
        return True

    def apply(self, world: World) -> None:
        brain = world.largest_brain()
        if brain is None:
            return
        if not self.moving and not self._start(world):
            return
        n_sons = len(world.topology().components())
        if n_sons > self._sons:
            self.breaks += n_sons - self._sons
            logger.info("%s: SoNS broke apart at step %d", world.name, world.step)
        self._sons = n_sons
        if self.destination is not None:
            goal = brain.features.get(self.destination)
            if goal is not None and goal.clearance()[0] <= self.stop_radius:
                if not self.reached:
                    logger.info("%s: destination reached", world.name)
                self.reached = True
        speed = self.speed or world.settings.protocol.v_default
        v = zeros3() if self.reached else speed * _heading(self.heading_deg)
        drive(world, {brain.robot_id: v})

    def success(self, world: World) -> bool:
        if not self.reached or self.pre_E is None or not world.log.samples:
            return False
        return world.log.samples[-1].E <= self.pre_E + self.e_tolerance

    def failure(self, world: World) -> bool:
        return self.breaks > self.max_breaks


@dataclasses.dataclass
class SweepScript(MissionScript):

    """Keep the SoNS as wide as the passage allows.

    The brain estimates the passage width from wall features. Below
    ``narrow_width`` it swaps to the ``narrow`` target graph, below
    ``line_width`` to the ``line`` graph, and back to its own graph once the
    width exceeds ``wide_width``. A swap needs ``confirm_steps`` consistent
    estimates.
    """

    kind: t.ClassVar[str] = "sweep"
    heading_deg: float = 0.0
    speed: t.Optional[float] = None
    narrow_width: float = 2.5
    line_width: float = 1.4
    wide_width: float = 3.0
    confirm_steps: int = 3
    destination: t.Optional[int] = None
    stop_radius: float = 0.5
    min_swaps: int = 0
    wait_steps: int = 500

    def attach(self, world: World) -> None:
        self.mode = "wide"
        self.swaps: t.List[t.Tuple[int, str]] = []
        self.reached = False
        self.moving = False
        self._pending: t.Optional[str] = None
        self._count = 0
        scenario = world.scenario
        alt = {} if scenario is None else scenario.alt_targets
        self.targets = {"wide": world.target}
        self.targets.update(alt)

    def wanted(self, width: float) -> str:
        if width < self.line_width and "line" in self.targets:
            return "line"
        if width < self.narrow_width and self.mode == "wide":
            return "narrow" if "narrow" in self.targets else self.mode
        if width > self.wide_width:
            return "wide"
        return self.mode

    def apply(self, world: World) -> None:
        brain = world.largest_brain()
        if brain is None:
            return
        if not self.moving:
            if world.log.converged_step is None and world.step < self.wait_steps:
                return
            self.moving = True
        heading = _heading(self.heading_deg)
        want = self.wanted(passage_width(brain, heading))
        if want != self.mode:
            self._count = self._count + 1 if want == self._pending else 1
            self._pending = want
            if self._count >= self.confirm_steps:
                self.mode = want
                self.swaps.append((world.step, want))
                self._pending, self._count = None, 0
                logger.info(
                    "%s: swap to the %s formation at step %d",
                    world.name,
                    want,
                    world.step,
                )
        else:
            self._pending, self._count = None, 0
        target = self.targets[self.mode]
        if active_target(brain) is not target:
            set_brain_target(brain, target)

        if self.destination is not None:
            goal = brain.features.get(self.destination)
            if goal is not None and goal.clearance()[0] <= self.stop_radius:
                self.reached = True
        speed = self.speed or world.settings.protocol.v_default
        drive(world, {brain.robot_id: zeros3() if self.reached else speed * heading})

    def success(self, world: World) -> bool:
        return self.reached and len(self.swaps) >= self.min_swaps


class Proposal(t.NamedTuple):
    step: int
    proposer: RobotId
    width: float


@dataclasses.dataclass
class BinaryDecisionScript(MissionScript):

    """Choose the wider of two openings, pass through it and encircle the
    destination.

    Robots that see an opening propose it. ``vote_steps`` after the first
    proposal the widest opening wins, ties going to the earliest proposal and
    then the lowest robot id. Its proposer is promoted to brain, the rest of
    the swarm re-merges under it, and the new brain leads the way.
    """

    kind: t.ClassVar[str] = "binary_decision"
    heading_deg: float = 0.0
    speed: t.Optional[float] = None
    vote_steps: int = 10
    merge_steps: int = 150
    pass_margin: float = 0.4
    destination: t.Optional[int] = None
    stop_radius: float = 0.6
    wait_steps: int = 500

    def attach(self, world: World) -> None:
        self.phase = "explore"
        self.proposals: t.Dict[int, Proposal] = {}
        self.chosen: t.Optional[int] = None
        self.leader: t.Optional[RobotId] = None
        self._since = world.step
        self._direction = _heading(self.heading_deg)
        self.targets = {} if world.scenario is None else world.scenario.alt_targets

    def _collect(self, world: World, brain: RobotState) -> None:
        root_type = active_target(brain).root_type
        for robot in sorted(world.topology().sons_of(brain.robot_id)):
            state = world.states[robot]
            if state.robot_type != root_type:
                continue
            for opening in _features(state, "opening"):
                if opening.feature_id not in self.proposals:
                    self.proposals[opening.feature_id] = Proposal(
                        world.step, robot, opening.width
                    )
                    logger.info(
                        "%s: robot %d proposes opening %d (%.2f m)",
                        world.name,
                        robot,
                        opening.feature_id,
                        opening.width,
                    )

    def decide(self) -> t.Optional[int]:
        """The winning opening: widest, then earliest, then lowest proposer."""
        if not self.proposals:
            return None
        return min(
            self.proposals,
            key=lambda k: (
                -self.proposals[k].width,
                self.proposals[k].step,
                self.proposals[k].proposer,
            ),
        )

    def apply(self, world: World) -> None:
        brain = world.largest_brain()
        if brain is None:
            return
        speed = self.speed or world.settings.protocol.v_default
        if self.phase == "explore":
            if world.log.converged_step is None and world.step < self.wait_steps:
                return
            self._collect(world, brain)
            first = min((p.step for p in self.proposals.values()), default=None)
            if first is not None and world.step - first >= self.vote_steps:
                self._elect(world, brain)
                drive(world, {})
                return
            drive(world, {brain.robot_id: speed * _heading(self.heading_deg)})
            return

        leader = world.states.get(self.leader) if self.leader is not None else None
        if leader is None:
            return
        if self.phase == "merge":
            drive(world, {})
            merged = brain.robot_id == leader.robot_id
            if merged or world.step - self._since >= self.merge_steps:
                self.phase = "approach"
            return

        if self.phase == "approach":
            assert self.chosen is not None
            opening = leader.features.get(self.chosen)
            if opening is not None:
                self._direction = _to_world(leader, opening.d)
                if opening.clearance()[0] <= self.pass_margin:
                    self.phase = "traverse"
                    logger.info("%s: passing opening %d", world.name, self.chosen)
        elif self.phase in ("traverse", "encircle"):
            goal = (
                None
                if self.destination is None
                else leader.features.get(self.destination)
            )
            if goal is not None:
                self._direction = _to_world(leader, goal.d)
                if goal.clearance()[0] <= self.stop_radius:
                    self._encircle(world, leader)
        if self.phase == "done":
            drive(world, {})
            return
        drive(world, {leader.robot_id: speed * self._direction})

    def _elect(self, world: World, brain: RobotState) -> None:
        self.chosen = self.decide()
        assert self.chosen is not None
        proposer = self.proposals[self.chosen].proposer
        self.leader = proposer
        self._since = world.step
        logger.info(
            "%s: opening %d chosen, robot %d leads", world.name, self.chosen, proposer
        )
        if proposer == brain.robot_id or proposer not in world.states:
            self.leader = brain.robot_id
            self.phase = "approach"
            return
        promote(world.states[proposer], brain.attrs.root_rank + 1.0)
        self.phase = "merge"

    def _encircle(self, world: World, leader: RobotState) -> None:
        if "encircle" in self.targets:
            set_brain_target(leader, self.targets["encircle"])
        self.phase = "done"
        logger.info("%s: encircling the destination", world.name)

    def widest_opening(self, world: World) -> t.Optional[int]:
        openings = [o for o in world.obstacles if o.kind == "opening"]
        if not openings:
            return None
        return max(openings, key=lambda o: o.width).obstacle_id

    def _chose_widest(self, world: World) -> bool:
        if self.chosen is None:
            return False
        widths = {o.obstacle_id: o.width for o in world.obstacles}
        return widths.get(self.chosen, 0.0) >= max(
            (o.width for o in world.obstacles if o.kind == "opening"), default=0.0
        )

    def success(self, world: World) -> bool:
        return self.phase == "done" and self._chose_widest(world)

    def failure(self, world: World) -> bool:
        return self.chosen is not None and not self._chose_widest(world)


@dataclasses.dataclass
class SplitMergeScript(MissionScript):

    """Split off a team, send it out, bring it back and merge again.

    After convergence the brain expels the child whose subtree is closest to
    ``team_size``; both SoNSs ignore each other until the team is home. The
    team heads out, pushing the ``push_target`` block or looking for the
    ``destination`` depending on ``variant``, and records every landmark it
    sees on a breadcrumb stack. On the way back it visits the landmarks in
    reverse order, then drives back along its outbound heading and lifts the
    ignore so the two SoNSs merge.
    """

    kind: t.ClassVar[str] = "split_merge"
    variant: str = "simple"
    team_size: int = 4
    heading_deg: float = 0.0
    speed: t.Optional[float] = None
    search_steps: int = 100
    destination: t.Optional[int] = None
    push_target: t.Optional[int] = None
    push_distance: float = 0.5
    stop_radius: float = 0.5
    return_radius: float = 0.5
    wait_steps: int = 500

    def __post_init__(self) -> None:
        if self.variant not in ("simple", "search_rescue", "push_obstruction"):
            raise exc.ConfigError(f"unknown split_merge variant {self.variant!r}")

    def attach(self, world: World) -> None:
        self.phase = "establish"
        self.home: t.Optional[RobotId] = None
        self.team: t.Optional[RobotId] = None
        self.breadcrumbs: t.List[int] = []
        self.visited: t.Set[int] = set()
        self.found = False
        self._out_steps = 0
        self._back_steps = 0
        self._block_start: t.Optional[Vec3] = None
        self.split_sizes: t.Optional[t.Tuple[int, int]] = None

    def _split(self, world: World, brain: RobotState) -> None:
        if not brain.children:
            return
        child = min(
            brain.children,
            key=lambda c: (
                brain.children[c].robot_type != AERIAL,
                abs(brain.children[c].total - self.team_size),
                c,
            ),
        )
        hold = world.settings.budget_steps
        brain.split_requests.append((child, hold))
        self.home, self.team = brain.robot_id, child
        self.phase = "split"
        logger.info("%s: robot %d leads the team", world.name, child)

    def _block(self, world: World) -> t.Optional[Obstacle]:
        for o in world.obstacles:
            if o.obstacle_id == self.push_target:
                return o
        return None

    def _pushing(self, world: World, team: RobotState, on: bool) -> None:
        """Let the team's ground robots press against the block."""
        members = world.topology().sons_of(team.robot_id)
        for robot in members:
            state = world.states[robot]
            if state.robot_type != GROUND:
                continue
            if on and self.push_target is not None:
                state.local_goal = (self.push_target, "reach")
            elif state.local_goal is not None:
                state.local_goal = None

    def _search_done(self, world: World, team: RobotState) -> bool:
        if self._out_steps >= self.search_steps:
            return True
        if self.variant == "search_rescue" and self.destination is not None:
            goal = team.features.get(self.destination)
            if goal is not None and goal.clearance()[0] <= self.stop_radius:
                self.found = True
                logger.info("%s: team found the destination", world.name)
                return True
        if self.variant == "push_obstruction":
            block = self._block(world)
            if block is not None and self._block_start is not None:
                return norm(block.p - self._block_start) >= self.push_distance
        return False

    def lift(self, world: World) -> None:
        """End the mutual ignore between home and team."""
        assert self.home is not None and self.team is not None
        for state in world.states.values():
            state.ignore_roots.pop(self.home, None)
            state.ignore_roots.pop(self.team, None)
        logger.info("%s: team %d returns home", world.name, self.team)

    def apply(self, world: World) -> None:
        brain = world.largest_brain()
        if brain is None:
            return
        speed = self.speed or world.settings.protocol.v_default
        out = _heading(self.heading_deg)
        if self.phase == "establish":
            if world.log.converged_step is not None or world.step >= self.wait_steps:
                self._split(world, brain)
            return

        team = world.states.get(self.team) if self.team is not None else None
        if team is None:
            return
        if self.phase == "split":
            if team.is_brain:
                assert self.home is not None
                home = world.topology().sons_of(self.home)
                team_sons = world.topology().sons_of(team.robot_id)
                self.split_sizes = (len(home), len(team_sons))
                block = self._block(world)
                if block is not None:
                    self._block_start = block.p.copy()
                self.phase = "search"
            return

        if self.phase == "search":
            for landmark in _features(team, "landmark"):
                if landmark.feature_id not in self.visited:
                    self.visited.add(landmark.feature_id)
                    self.breadcrumbs.append(landmark.feature_id)
            direction = out
            if self.variant == "push_obstruction" and self.push_target is not None:
                block = team.features.get(self.push_target)
                toward = None if block is None else _to_world(team, block.d)
                if toward is not None and float(np.dot(toward, out)) > 0.0:
                    direction = toward
                self._pushing(world, team, True)
            self._out_steps += 1
            if self._search_done(world, team):
                self._pushing(world, team, False)
                self.phase = "return"
            drive(world, {team.robot_id: speed * direction})
            return

        if self.phase == "return":
            direction = -out
            while self.breadcrumbs:
                crumb = team.features.get(self.breadcrumbs[-1])
                if crumb is None:
                    break
                if crumb.clearance()[0] > self.return_radius:
                    direction = _to_world(team, crumb.d)
                    break
                self.breadcrumbs.pop()
            if not self.breadcrumbs and self._back_steps == 0:
                self.lift(world)
            if not self.breadcrumbs:
                self._back_steps += 1
            if self._back_steps >= self._out_steps:
                self.phase = "merge"
                drive(world, {})
                return
            drive(world, {team.robot_id: speed * direction})
            return

        drive(world, {})

    def success(self, world: World) -> bool:
        if self.phase != "merge":
            return False
        if self.variant == "search_rescue" and not self.found:
            return False
        return len(world.topology().components()) == 1

    def failure(self, world: World) -> bool:
        return self.team is not None and self.team not in world.states


SCRIPTS: t.Dict[str, t.Type[MissionScript]] = {
    cls.kind: cls
    for cls in (
        EstablishmentScript,
        ObstacleFieldScript,
        SweepScript,
        BinaryDecisionScript,
        SplitMergeScript,
    )
}


def script_from_dict(data: t.Optional[t.Mapping[str, t.Any]]) -> MissionScript:
    """Build the ``script:`` block; ``kind`` picks the class.

    >>> script_from_dict({"kind": "sweep", "line_width": 1.0}).line_width
    1.0
    >>> script_from_dict({"kind": "dance"})
    Traceback (most recent call last):
    ...
    sonsim.exc.ConfigError: field 'script.kind': unknown mission script 'dance'
    """
    values = dict(data or {"kind": "establishment"})
    kind = values.pop("kind", "establishment")
    cls = SCRIPTS.get(kind)
    if cls is None:
        raise exc.ConfigError(f"unknown mission script {kind!r}", field="script.kind")
    try:
        return cls(**values)
    except TypeError as e:
        raise exc.ConfigError(str(e), field="script") from e


def _type_counts(robots: t.Sequence[RobotSpec]) -> t.Tuple[int, int]:
    n_aerial = sum(1 for r in robots if r.robot_type == AERIAL)
    return n_aerial, len(robots) - n_aerial


def target_from_dict(
    data: t.Mapping[str, t.Any], robots: t.Sequence[RobotSpec]
) -> TargetGraph:
    """A target graph; a ``lookup`` without counts uses the swarm's counts."""
    if isinstance(data, t.Mapping) and "lookup" in data:
        lookup = dict(data["lookup"] or {})
        n_aerial, n_ground = _type_counts(robots)
        lookup.setdefault("aerial", n_aerial)
        lookup.setdefault("ground", n_ground)
        data = {"lookup": lookup}
    return TargetGraph.from_dict(data)


def generate_swarm(
    spec: t.Mapping[str, t.Any],
    arena: Arena,
    rng: np.random.Generator,
    first_id: int = 1,
    keep_clear: t.Sequence[Obstacle] = (),
) -> t.List[RobotSpec]:
    """Seeded start poses for ``n`` robots.

    ``clustered`` places them in a disc of radius ``spread`` around
    ``center``, grown by ``sqrt(n / 8)`` beyond eight robots. ``scattered``
    places them anywhere in the arena, ``grid`` on a square grid of pitch
    ``spread``. One robot in four is aerial unless ``n_aerial`` says
    otherwise.
    """
    values = dict(spec)
    n = int(values.pop("n", 8))
    n_aerial = int(values.pop("n_aerial", max(1, round(n / 4))))
    layout = values.pop("layout", "clustered")
    center = vec3(*map(float, values.pop("center", (0.0, 0.0))))
    spread = float(values.pop("spread", 1.5))
    margin = float(values.pop("margin", 0.5))
    if values:
        raise exc.ConfigError(f"unknown swarm keys {sorted(values)}", field="swarm")
    if layout not in LAYOUTS:
        raise exc.ConfigError(f"unknown swarm layout {layout!r}", field="swarm.layout")
    if not 0 < n_aerial <= n:
        raise exc.ConfigError("n_aerial must be between 1 and n", field="swarm")

    if layout == "clustered" and n > 8:
        spread *= math.sqrt(n / 8.0)
    types = [AERIAL] * n_aerial + [GROUND] * (n - n_aerial)
    placed: t.List[RobotSpec] = []
    for k, robot_type in enumerate(types):
        if layout == "grid":
            side = math.ceil(math.sqrt(n))
            row, col = divmod(k, side)
            offset = (side - 1) / 2.0
            p = center + spread * vec3(col - offset, row - offset)
        else:
            p = _free_spot(
                layout,
                robot_type,
                center,
                spread,
                margin,
                arena,
                rng,
                placed,
                keep_clear,
            )
        yaw = float(rng.uniform(-math.pi, math.pi))
        placed.append(RobotSpec(first_id + k, robot_type, p, yaw))
    return placed


def _free_spot(
    layout: str,
    robot_type: str,
    center: Vec3,
    spread: float,
    margin: float,
    arena: Arena,
    rng: np.random.Generator,
    placed: t.Sequence[RobotSpec],
    keep_clear: t.Sequence[Obstacle],
    tries: int = 1000,
) -> Vec3:
    gap = MIN_SEPARATION[robot_type]
    for _ in range(tries):
        if layout == "clustered":
            r = spread * math.sqrt(float(rng.random()))
            a = float(rng.uniform(-math.pi, math.pi))
            p = center + vec3(r * math.cos(a), r * math.sin(a))
        else:
            p = vec3(
                float(rng.uniform(-arena.length / 2, arena.length / 2)),
                float(rng.uniform(-arena.width / 2, arena.width / 2)),
            )
        if not arena.contains(p, margin):
            continue
        if any(
            r.robot_type == robot_type and norm(r.position[:2] - p[:2]) < gap
            for r in placed
        ):
            continue
        if robot_type == GROUND and any(
            o.solid and o.penetration(p, gap)[0] > 0.0 for o in keep_clear
        ):
            continue
        return p
    raise exc.ConfigError(f"no room for {len(placed) + 1} robots", field="swarm")


def obstacle_field(
    spec: t.Mapping[str, t.Any], rng: np.random.Generator, first_id: int
) -> t.List[Obstacle]:
    """Seeded non-overlapping cylinders inside ``region: [x0, y0, x1, y1]``."""
    values = dict(spec)
    count = int(values.pop("count", 10))
    radius = values.pop("radius", 0.15)
    r_lo, r_hi = (radius, radius) if np.isscalar(radius) else map(float, radius)
    x0, y0, x1, y1 = map(float, values.pop("region", (1.0, -2.0, 5.0, 2.0)))
    min_gap = float(values.pop("min_gap", 0.3))
    pushable = bool(values.pop("pushable", False))
    if values:
        raise exc.ConfigError(
            f"unknown obstacle_field keys {sorted(values)}", field="obstacle_field"
        )
    field: t.List[Obstacle] = []
    for _ in range(count * 100):
        if len(field) == count:
            break
        r = float(rng.uniform(r_lo, r_hi))
        p = vec3(float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))
        if any(norm(o.p - p) < o.radius + r + min_gap for o in field):
            continue
        field.append(
            Obstacle(first_id + len(field), p, radius=r, pushable=pushable)
        )
    if len(field) < count:
        logger.warning("obstacle field holds only %d of %d", len(field), count)
    return field


def barrier(
    spec: t.Mapping[str, t.Any],
    arena: Arena,
    rng: t.Optional[np.random.Generator],
    first_id: int,
) -> t.List[Obstacle]:
    """A wall across the arena at ``x`` with two openings.

    The openings sit at ``±offset`` across the arena; with ``shuffle`` the
    seed decides which side gets which of ``widths``. Each gap carries an
    ``opening`` marker with its width.

    >>> walls = barrier({"x": 2.0, "widths": [2.0, 1.0]}, Arena(), None, 10)
    >>> [(o.kind, o.width) for o in walls if o.kind == "opening"]
    [('opening', 2.0), ('opening', 1.0)]
    >>> len([o for o in walls if o.kind == "wall"])
    3
    """
    values = dict(spec)
    x = float(values.pop("x", 2.5))
    widths = [float(w) for w in values.pop("widths", (2.0, 1.0))]
    offset = float(values.pop("offset", 1.5))
    thickness = float(values.pop("thickness", 0.1))
    shuffle = bool(values.pop("shuffle", False))
    if values or len(widths) != 2:
        raise exc.ConfigError("barrier needs x, widths: [a, b]", field="barrier")
    if shuffle and rng is not None and rng.random() < 0.5:
        widths.reverse()
    centers = [-offset, offset]
    edges = [-arena.width / 2.0]
    for c, w in zip(centers, widths):
        edges.extend([c - w / 2.0, c + w / 2.0])
    edges.append(arena.width / 2.0)
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise exc.ConfigError("barrier openings overlap", field="barrier")
    parts: t.List[Obstacle] = []
    for lo, hi in zip(edges[::2], edges[1::2]):
        parts.append(
            Obstacle(
                first_id + len(parts),
                vec3(x, (lo + hi) / 2.0),
                kind="wall",
                shape="box",
                half_x=thickness / 2.0,
                half_y=(hi - lo) / 2.0,
            )
        )
    for c, w in zip(centers, widths):
        parts.append(
            Obstacle(first_id + len(parts), vec3(x, c), kind="opening", width=w)
        )
    return parts


@dataclasses.dataclass
class Scenario:

    """One mission setup, ready to build worlds from.

    Examples
    --------
    >>> s = Scenario.load("establishment", ["swarm.n=4"], seed=3)
    >>> s.name, len(s.robots), s.settings.seed
    ('establishment', 4, 3)
    >>> len(s.target)
    4
    """

    name: str
    settings: Settings
    robots: t.List[RobotSpec]
    target: t.Optional[TargetGraph] = None
    alt_targets: t.Dict[str, TargetGraph] = dataclasses.field(default_factory=dict)
    obstacles: t.List[Obstacle] = dataclasses.field(default_factory=list)
    faults: t.List[FaultEvent] = dataclasses.field(default_factory=list)
    arena: t.Optional[Arena] = None
    script: MissionScript = dataclasses.field(default_factory=EstablishmentScript)
    description: str = ""

    @property
    def budget_steps(self) -> int:
        return self.settings.budget_steps

    def success(self, world: World) -> bool:
        return self.script.success(world)

    def failure(self, world: World) -> bool:
        return self.script.failure(world)

    def build(self) -> World:
        return World.from_scenario(self)

    def run(self, max_steps: t.Optional[int] = None) -> RunLog:
        return self.build().run(max_steps)

    @classmethod
    def from_dict(
        cls,
        data: t.Mapping[str, t.Any],
        name: str = "scenario",
        sources: t.Optional[Sources] = None,
    ) -> "Scenario":
        """Validate scenario data, as loaded by :func:`sonsim.config.read_yaml`.

        Raises
        ------
        :exc:`exc.ConfigError`
            with the file and line of the offending block when known
        """
        sources = sources or []

        def fail(message: str, key: str) -> exc.ConfigError:
            source, line = line_of(sources, key.split("."))
            return exc.ConfigError(message, source=source, line=line, field=key)

        unknown = sorted(set(data) - SCENARIO_KEYS)
        if unknown:
            raise fail("unknown key", unknown[0])
        settings = settings_from_dict(data.get("settings"), sources)
        rng = np.random.default_rng([settings.seed, LAYOUT_STREAM])

        block = "arena"
        try:
            arena = Arena(**dict(data.get("arena") or {}))
            obstacles = [
                Obstacle.from_dict(o, k + 1)
                for k, o in enumerate(data.get("obstacles") or [])
            ]
            block = "obstacle_field"
            if data.get("obstacle_field"):
                obstacles += obstacle_field(
                    data["obstacle_field"], rng, _next_id(obstacles)
                )
            block = "barrier"
            if data.get("barrier"):
                obstacles += barrier(data["barrier"], arena, rng, _next_id(obstacles))
            block = "robots"
            robots = [_robot_spec(r) for r in data.get("robots") or []]
            block = "swarm"
            if data.get("swarm"):
                first = max([r.robot_id for r in robots] + [0]) + 1
                robots += generate_swarm(data["swarm"], arena, rng, first, obstacles)
            block = "target"
            target = (
                target_from_dict(data["target"], robots) if data.get("target") else None
            )
            block = "alt_targets"
            alt_targets = {
                str(k): target_from_dict(v, robots)
                for k, v in (data.get("alt_targets") or {}).items()
            }
            block = "faults"
            faults = [
                FaultEvent.from_dict(f, settings.tick) for f in data.get("faults") or []
            ]
            block = "script"
            script = script_from_dict(data.get("script"))
        except exc.ConfigError as e:
            if e.field is not None and e.source is not None:
                raise
            raise fail(e.message, e.field or block) from e
        except (exc.InvalidTargetGraph, TypeError, ValueError) as e:
            raise fail(str(e), block) from e
        if not robots:
            raise fail("scenario has no robots", "swarm")
        logger.debug("scenario %s: %d obstacles", name, len(obstacles))
        return cls(
            name=str(data.get("name", name)),
            settings=settings,
            robots=robots,
            target=target,
            alt_targets=alt_targets,
            obstacles=obstacles,
            faults=faults,
            arena=arena,
            script=script,
            description=str(data.get("description", "")),
        )

    @classmethod
    def load(
        cls,
        name: t.Union[str, pathlib.Path],
        overrides: t.Iterable[str] = (),
        seed: t.Optional[int] = None,
        budget_s: t.Optional[float] = None,
    ) -> "Scenario":
        """Read a scenario file by path or bundled name.

        ``seed`` and ``budget_s`` are shorthands for the matching overrides.
        """
        extra = list(overrides)
        if seed is not None:
            extra.append(f"seed={int(seed)}")
        if budget_s is not None:
            extra.append(f"budget_s={float(budget_s)}")
        data, sources = load_scenario_data(name, extra)
        return cls.from_dict(data, pathlib.Path(str(name)).stem, sources)


def _next_id(obstacles: t.Sequence[Obstacle]) -> int:
    return max([o.obstacle_id for o in obstacles] + [0]) + 1


def _robot_spec(data: t.Mapping[str, t.Any]) -> RobotSpec:
    if "id" not in data:
        raise exc.ConfigError("every robot needs an id", field="robots")
    p = list(map(float, data.get("p", data.get("position", (0.0, 0.0)))))
    p += [0.0] * (3 - len(p))
    robot_type = str(data.get("type", GROUND))
    if robot_type not in (AERIAL, GROUND):
        raise exc.ConfigError(f"unknown robot type {robot_type!r}", field="robots")
    return RobotSpec(
        int(data["id"]),
        robot_type,
        vec3(*p),
        math.radians(float(data.get("yaw_deg", 0.0))),
    )


def mission_establishment(
    variant: str = "clustered",
    n: int = 8,
    seed: int = 0,
    overrides: t.Iterable[str] = (),
) -> Scenario:
    """Form one SoNS from ``n`` robots that start clustered or scattered."""
    if variant not in ("clustered", "scattered"):
        raise exc.ConfigError(f"unknown establishment variant {variant!r}")
    extra = [f"swarm.layout={variant}", f"swarm.n={int(n)}", *overrides]
    return Scenario.load("establishment", extra, seed=seed)


def mission_obstacle_field(
    variant: str = "small_dense", seed: int = 0, overrides: t.Iterable[str] = ()
) -> Scenario:
    """Cross a field of small dense or large sparse obstacles."""
    variant = variant.replace("-", "_")
    if variant not in ("small_dense", "large_sparse", "empty"):
        raise exc.ConfigError(f"unknown obstacle field variant {variant!r}")
    name = "obstacle_field" if variant == "empty" else f"obstacle_field_{variant}"
    return Scenario.load(name, overrides, seed=seed)


def mission_sweep(seed: int = 0, overrides: t.Iterable[str] = ()) -> Scenario:
    """Sweep a corridor that narrows and widens again."""
    return Scenario.load("sweep", overrides, seed=seed)


def mission_binary_decision(
    seed: int = 0, overrides: t.Iterable[str] = ()
) -> Scenario:
    """Pick the wider of two openings; which side it is depends on the seed."""
    return Scenario.load("binary_decision", overrides, seed=seed)


def mission_split_merge(
    variant: str = "simple", seed: int = 0, overrides: t.Iterable[str] = ()
) -> Scenario:
    """Split a team off, send it on an errand and merge again."""
    variant = variant.replace("-", "_")
    if variant not in ("simple", "search_rescue", "push_obstruction"):
        raise exc.ConfigError(f"unknown split_merge variant {variant!r}")
    return Scenario.load(f"split_merge_{variant}", overrides, seed=seed)


class RunJob(t.NamedTuple):

    """One seeded run of a batch; picklable for worker processes."""

    scenario: str
    seed: int
    overrides: t.Tuple[str, ...] = ()
    budget_s: t.Optional[float] = None
    label: str = ""
    fault: str = ""
    magnitude: float = 0.0

    @property
    def stem(self) -> str:
        label = self.label.replace("=", "").replace(" ", "_")
        base = pathlib.Path(self.scenario).stem
        return f"{base}-{label}-{self.seed}" if label else f"{base}-{self.seed}"


def fault_recovery(
    log: RunLog, fault_step: int, window: int
) -> t.Tuple[t.Optional[float], t.Optional[float]]:
    """Mean E over ``window`` steps before the fault, and over the last ones."""
    before = [s.E for s in log.samples if fault_step - window <= s.step < fault_step]
    after = [s.E for s in log.samples[-window:] if s.step >= fault_step]
    return (
        float(np.mean(before)) if before else None,
        float(np.mean(after)) if after else None,
    )


def run_job(
    job: RunJob, out_dir: t.Optional[str] = None, fmt: str = "csv"
) -> RunSummary:
    """Run one job; with ``out_dir`` also write its log and summary."""
    scenario = Scenario.load(job.scenario, job.overrides, job.seed, job.budget_s)
    log = scenario.run()
    summary: RunSummary = dict(
        log.summary(), label=job.label, fault=job.fault, magnitude=job.magnitude
    )
    if scenario.faults:
        pre, post = fault_recovery(
            log, min(f.step for f in scenario.faults), scenario.settings.metrics.window
        )
        summary.update(pre_fault_E=pre, recovered_E=post)
    if out_dir is not None:
        out = pathlib.Path(out_dir)
        log.emit(out, fmt)
        write_summaries(out / f"{job.stem}.summary.csv", [summary], BATCH_SUMMARY)
    return summary


@dataclasses.dataclass
class Batch:

    """Summaries of a set of runs, one row per run."""

    name: str
    rows: t.List[RunSummary] = dataclasses.field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def by_label(self) -> t.Dict[str, t.List[RunSummary]]:
        groups: t.Dict[str, t.List[RunSummary]] = {}
        for row in self.rows:
            groups.setdefault(str(row.get("label", "")), []).append(row)
        return groups

    def aggregate(self) -> t.List[RunSummary]:
        """Per label: runs, successes and the means of the numeric columns."""
        out = []
        for label, rows in self.by_label().items():
            agg: RunSummary = {"label": label, "runs": len(rows)}
            agg["successes"] = sum(1 for r in rows if _truthy(r.get("success")))
            for column in (
                "converged_step",
                "final_E",
                "bytes_per_robot_step",
                "ops_max",
                "stranded",
                "survivors",
                "pre_fault_E",
                "recovered_E",
            ):
                values = [_number(r.get(column)) for r in rows]
                present = [v for v in values if v is not None]
                agg[column] = float(np.mean(present)) if present else None
            out.append(agg)
        return out

    def to_csv(self, path: t.Union[str, pathlib.Path]) -> pathlib.Path:
        return write_summaries(path, self.rows, BATCH_SUMMARY)

    def aggregate_csv(self, path: t.Union[str, pathlib.Path]) -> pathlib.Path:
        rows = self.aggregate()
        columns = list(rows[0]) if rows else ["label", "runs", "successes"]
        return write_summaries(path, rows, columns)


def _truthy(value: t.Any) -> bool:
    return value is True or str(value).lower() == "true"


def _number(value: t.Any) -> t.Optional[float]:
    if value is None or value == "":
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        return None


def run_batch(
    name: str,
    jobs: t.Sequence[RunJob],
    workers: int = 1,
    out_dir: t.Optional[t.Union[str, pathlib.Path]] = None,
    fmt: str = "csv",
) -> Batch:
    """Run ``jobs`` in worker processes, in job order.

    With ``out_dir``, a job whose summary file already exists is not run
    again; its stored summary is used instead.
    """
    out = None if out_dir is None else str(out_dir)
    rows: t.List[t.Optional[RunSummary]] = [None] * len(jobs)
    todo: t.List[int] = []
    for k, job in enumerate(jobs):
        done = None if out is None else pathlib.Path(out) / f"{job.stem}.summary.csv"
        if done is not None and done.is_file():
            rows[k] = dict(read_summaries(done)[0])
            logger.info("%s: %s already done", name, job.stem)
        else:
            todo.append(k)
    if workers > 1 and len(todo) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                k: pool.submit(run_job, jobs[k], out, fmt) for k in todo
            }
            for k, future in futures.items():
                rows[k] = future.result()
    else:
        for k in todo:
            rows[k] = run_job(jobs[k], out, fmt)
    batch = Batch(name, [r for r in rows if r is not None])
    if out is not None:
        batch.to_csv(pathlib.Path(out) / "summary.csv")
        batch.aggregate_csv(pathlib.Path(out) / "aggregate.csv")
    return batch


def scalability_time_limit(n: int) -> float:
    """Simulated seconds a run of ``n`` robots may take.

    >>> scalability_time_limit(50), scalability_time_limit(250)
    (500.0, 1500.0)
    """
    if n <= 125:
        return 500.0
    return 4.0 * n + 4.0 * (n - 125)


def arena_overrides(n: int) -> t.List[str]:
    """A square arena that keeps the robot density of ten meters for 25 robots.

    >>> arena_overrides(25)
    ['arena.length=10.0', 'arena.width=10.0']
    >>> arena_overrides(100)
    ['arena.length=20.0', 'arena.width=20.0']
    """
    side = max(10.0, round(2.0 * math.sqrt(n), 1))
    return [f"arena.length={side}", f"arena.width={side}"]


def scalability_jobs(
    sizes: t.Iterable[int],
    seeds: t.Iterable[int],
    scenario: str = "establishment",
    overrides: t.Iterable[str] = (),
) -> t.List[RunJob]:
    seeds = list(seeds)
    return [
        RunJob(
            scenario,
            seed,
            (f"swarm.n={n}", *arena_overrides(n), *overrides),
            scalability_time_limit(n),
            label=f"n={n}",
        )
        for n in sizes
        for seed in seeds
    ]


def experiment_scalability(
    sizes: t.Iterable[int] = (5,),
    seeds: t.Iterable[int] = range(10),
    scenario: str = "establishment",
    overrides: t.Iterable[str] = (),
    workers: int = 1,
    out_dir: t.Optional[t.Union[str, pathlib.Path]] = None,
) -> Batch:
    """Establishment runs for each swarm size and seed."""
    jobs = scalability_jobs(sizes, seeds, scenario, overrides)
    return run_batch("scalability", jobs, workers, out_dir)


FAULT_EXPERIMENTS = ("kill_random", "kill_brain", "vision_blackout", "comm_blackout")


def fault_schedule(kind: str, magnitude: float, time_s: float) -> str:
    """The ``faults=`` override for one fault experiment.

    ``magnitude`` is the kill probability for ``kill_random`` and the duration
    in seconds for the blackouts.

    >>> fault_schedule("kill_random", 1 / 3, 40.0)
    'faults=[{kind: kill_random, time_s: 40.0, probability: 0.3333333333333333}]'
    """
    if kind not in FAULT_EXPERIMENTS:
        raise exc.ConfigError(f"unknown fault experiment {kind!r}")
    if kind == "kill_random":
        body = f"kind: kill_random, time_s: {time_s}, probability: {magnitude!r}"
    elif kind == "kill_brain":
        body = f"kind: kill, time_s: {time_s}, robot: brain"
    else:
        body = f"kind: {kind}, time_s: {time_s}, duration_s: {magnitude!r}"
    return f"faults=[{{{body}}}]"


def fault_jobs(
    kind: str,
    magnitude: float,
    seeds: t.Iterable[int],
    scenario: str = "sweep",
    time_s: float = 40.0,
    overrides: t.Iterable[str] = (),
) -> t.List[RunJob]:
    schedule = fault_schedule(kind, magnitude, time_s)
    return [
        RunJob(
            scenario,
            seed,
            (*overrides, schedule),
            label=f"{kind}={magnitude:g}",
            fault=kind,
            magnitude=magnitude,
        )
        for seed in seeds
    ]


def experiment_fault(
    kind: str,
    magnitude: float = 0.0,
    seeds: t.Iterable[int] = range(10),
    scenario: str = "sweep",
    time_s: float = 40.0,
    overrides: t.Iterable[str] = (),
    workers: int = 1,
    out_dir: t.Optional[t.Union[str, pathlib.Path]] = None,
) -> Batch:
    """Sweep-mission runs with one fault injected at ``time_s``."""
    jobs = fault_jobs(kind, magnitude, seeds, scenario, time_s, overrides)
    return run_batch(f"fault-{kind}", jobs, workers, out_dir)


def _seed_list(value: t.Any, source: str) -> t.List[int]:
    if value is None:
        return [0]
    if isinstance(value, t.Mapping):
        start = int(value.get("start", 0))
        return list(range(start, start + int(value.get("count", 1))))
    if isinstance(value, int):
        return list(range(value))
    if isinstance(value, list):
        return [int(v) for v in value]
    raise exc.ConfigError(f"bad seeds {value!r}", source=source, field="seeds")


def load_manifest(path: t.Union[str, pathlib.Path]) -> t.Tuple[str, t.List[RunJob]]:
    """Jobs of a sweep manifest.

    A manifest names a ``scenario``, the ``seeds`` (a list, a count or
    ``{start, count}``) and ``overrides``. ``sizes`` turns it into a scalability
    sweep, ``faults`` (``[{kind, magnitude, time_s}]``) into a fault sweep.
    The scenario path is taken relative to the manifest when it exists there.
    """
    path = pathlib.Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as e:
        raise exc.ConfigError(f"cannot read manifest: {e}", source=str(path)) from e
    if not isinstance(data, dict) or "scenario" not in data:
        raise exc.ConfigError("manifest needs a scenario", source=str(path))
    scenario = str(data["scenario"])
    local = path.parent / scenario
    if local.is_file():
        scenario = str(local)
    else:
        resolve_scenario(scenario)
    seeds = _seed_list(data.get("seeds"), str(path))
    overrides = tuple(str(o) for o in data.get("overrides") or ())
    budget = data.get("budget_s")
    name = str(data.get("name", path.stem))
    if data.get("sizes"):
        return name, scalability_jobs(data["sizes"], seeds, scenario, overrides)
    if data.get("faults"):
        jobs: t.List[RunJob] = []
        for fault in data["faults"]:
            jobs += fault_jobs(
                str(fault["kind"]),
                float(fault.get("magnitude", 0.0)),
                seeds,
                scenario,
                float(fault.get("time_s", 40.0)),
                overrides,
            )
        return name, jobs
    return name, [
        RunJob(scenario, seed, overrides, None if budget is None else float(budget))
        for seed in seeds
    ]


__all__ = [
    "Batch",
    "BinaryDecisionScript",
    "EstablishmentScript",
    "MissionScript",
    "ObstacleFieldScript",
    "RunJob",
    "Scenario",
    "SplitMergeScript",
    "SweepScript",
    "experiment_fault",
    "experiment_scalability",
    "load_manifest",
    "mission_binary_decision",
    "mission_establishment",
    "mission_obstacle_field",
    "mission_split_merge",
    "mission_sweep",
    "passage_width",
    "run_batch",
    "run_job",
]
