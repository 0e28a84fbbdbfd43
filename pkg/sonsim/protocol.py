"""The per-robot SoNS state machine.

sonsim.protocol
~~~~~~~~~~~~~~~

One call to :func:`step_protocol` advances one robot by one tick. The robot
reads the messages sent to it in the previous tick and what it senses now, and
produces its outgoing messages and a motion command ``(v*, ω*)`` in its own
frame. Nothing here reads another robot's state; every cross-robot effect is a
:class:`Message`.

Processing order within a step:

1. link refresh against what is sensed
2. identity and attribute updates
3. recruitment
4. node allocation and redistribution
5. splitting and expulsion
6. sensing propagation
7. reference vectors and motion fusion

"""
import dataclasses
import enum
import logging
import math
import typing as t

import numpy as np

from . import exc
from .allocation import AllocationProblem, allocate, substitution_test
from .config import ProtocolConstants
from .core import (
    AERIAL,
    AVOID_KINDS,
    GROUND,
    ChildReport,
    IdentityUpdate,
    LinkState,
    NodeAttributes,
    NodeId,
    RobotId,
    RobotRank,
    RobotType,
    SensedFeature,
    SensedNeighbor,
    TargetGraph,
    draw_rank,
    update_cardinality_height,
    update_identity,
)
from .formats import MESSAGE_KINDS, message_bytes
from .geometry import (
    UnitQuat,
    Vec3,
    hamilton,
    norm,
    quat_identity,
    quat_inverse,
    quat_to_rotation_vector,
    rotate_vector,
    segments_intersect_2d,
    unit,
    vec3,
    yaw_quat,
    zeros3,
)

logger = logging.getLogger(__name__)

#: Feature kinds forwarded upstream toward the brain
FORWARD_KINDS = ("wall", "opening", "destination", "landmark")

#: Steps an actuation instruction stays usable after it was received
INSTRUCTION_TTL = 1

#: Steps a rejected robot ignores the SoNS that rejected it
REJECT_HOLD = 2

REQUIRED_KEYS: t.Dict[str, t.Tuple[str, ...]] = {
    "Recruit": (
        "root_id",
        "root_rank",
        "root_type",
        "root_card",
        "root_nonce",
        "path",
        "eligible",
        "robot_type",
    ),
    "RecruitAccept": ("robot_type", "card", "height"),
    "AttributeUpdate": ("direction",),
    "TargetAssignment": ("node", "target", "table", "siblings"),
    "Handover": ("role", "child"),
    "Expel": ("reason",),
    "ActuationInstruction": ("d", "q", "damping"),
    "SensorFeature": ("feature_id", "kind", "d", "q"),
    "GlobalVelocity": ("v", "omega", "origin"),
    "StabilizationOverride": ("active",),
}

_DOWN_KEYS = ("root_id", "root_rank", "root_type", "root_card", "root_nonce", "path")
_UP_KEYS = ("parent", "robot_type", "card", "height", "overridden", "children")


@dataclasses.dataclass(frozen=True)
class Message:

    """One local-communication payload.

    Examples
    --------
    >>> m = Message("GlobalVelocity", 1, 2, {"v": vec3(), "omega": vec3(),
    ...                                       "origin": 1})
    >>> m.nbytes
    31
    """

    kind: str
    sender: RobotId
    receiver: RobotId
    payload: t.Mapping[str, t.Any] = dataclasses.field(default_factory=dict)

    @property
    def nbytes(self) -> int:
        return message_bytes(self.payload)

    def is_valid(self) -> bool:
        if self.kind not in MESSAGE_KINDS:
            return False
        required = REQUIRED_KEYS[self.kind]
        if self.kind == "AttributeUpdate":
            direction = self.payload.get("direction")
            if direction == "down":
                required = required + _DOWN_KEYS
            elif direction == "up":
                required = required + _UP_KEYS
            else:
                return False
        return all(key in self.payload for key in required)


class Decision(enum.Enum):
    BECOME_PARENT = "becomeParent"
    BECOME_CHILD = "becomeChild"
    IGNORE = "ignore"


@dataclasses.dataclass
class ReferenceVectors:

    """The six reference vectors of one robot, in its own frame."""

    v_local: Vec3 = dataclasses.field(default_factory=zeros3)
    v_hier: Vec3 = dataclasses.field(default_factory=zeros3)
    v_global: Vec3 = dataclasses.field(default_factory=zeros3)
    omega_local: Vec3 = dataclasses.field(default_factory=zeros3)
    omega_hier: Vec3 = dataclasses.field(default_factory=zeros3)
    omega_global: Vec3 = dataclasses.field(default_factory=zeros3)

    def fused(self) -> t.Tuple[Vec3, Vec3]:
        """``v* = v_hier + v_local + v_global``, and the same for ``ω*``."""
        v = self.v_hier + self.v_local + self.v_global
        omega = self.omega_hier + self.omega_local + self.omega_global
        return v, omega


class RecruitOffer(t.NamedTuple):
    sender: RobotId
    sender_type: RobotType
    root_id: RobotId
    root_rank: RobotRank
    root_type: RobotType
    root_card: int
    root_nonce: float
    path: t.Tuple[RobotId, ...]
    eligible: bool

    @classmethod
    def from_message(cls, message: Message) -> "RecruitOffer":
        p = message.payload
        return cls(
            sender=message.sender,
            sender_type=str(p["robot_type"]),
            root_id=int(p["root_id"]),
            root_rank=float(p["root_rank"]),
            root_type=str(p["root_type"]),
            root_card=int(p["root_card"]),
            root_nonce=float(p["root_nonce"]),
            path=tuple(p["path"]),
            eligible=bool(p["eligible"]),
        )

    def identity(self) -> IdentityUpdate:
        return IdentityUpdate(
            root_id=self.root_id,
            root_rank=self.root_rank,
            root_type=self.root_type,
            root_card=self.root_card,
            root_nonce=self.root_nonce,
            path=self.path,
        )


class TableEntry(t.NamedTuple):
    """A target child of the parent, as published to its children."""

    node: NodeId
    robot_type: RobotType
    d: Vec3
    vacant: bool
    claimant: t.Optional[RobotId]


class SiblingEntry(t.NamedTuple):
    """A child of the parent and its own children, in the parent's frame."""

    robot_id: RobotId
    d: Vec3
    children: t.Tuple[t.Tuple[RobotId, RobotType, Vec3], ...]


class GlobalInput(t.NamedTuple):
    v: Vec3
    omega: Vec3
    sender: RobotId


class Instruction(t.NamedTuple):
    d: Vec3
    q: UnitQuat
    damping: float
    step: int


@dataclasses.dataclass
class ChildRecord:

    """What a parent keeps about one child."""

    robot_type: RobotType
    link: LinkState
    report: ChildReport
    node: t.Optional[NodeId] = None
    overridden: bool = False
    #: the child and its whole subtree hold their slots
    settled: bool = False
    #: (id, type, displacement in the child's frame, total cardinality)
    grandchildren: t.List[t.Tuple[RobotId, RobotType, Vec3, int]] = dataclasses.field(
        default_factory=list
    )
    silent: int = 0
    bound_for: t.Optional[RobotId] = None
    substitute: bool = False
    handed_at: int = -10
    assigned_at: int = -10
    sent_key: t.Any = None

    @property
    def total(self) -> int:
        return sum(self.report.cardinality.values())


@dataclasses.dataclass
class ProtocolCounters:
    dropped_msgs: int = 0
    aborted_handovers: int = 0
    handovers: int = 0
    recruits: int = 0
    #: decisions and allocation work in the last step
    ops: int = 0


@dataclasses.dataclass
class RobotState:

    """One robot's protocol state.

    Owned by a single agent; :func:`step_protocol` mutates it in place.

    Examples
    --------
    >>> g = TargetGraph.lookup(n_aerial=1, n_ground=2)
    >>> s = RobotState.create(4, AERIAL, g, seed=1)
    >>> s.attrs.is_brain, s.node
    (True, 0)
    >>> RobotState.create(5, GROUND, g, seed=1).node is None
    True
    """

    robot_id: RobotId
    robot_type: RobotType
    attrs: NodeAttributes
    default_target: TargetGraph
    constants: ProtocolConstants
    rng: np.random.Generator
    parent: t.Optional[LinkState] = None
    children: t.Dict[RobotId, ChildRecord] = dataclasses.field(default_factory=dict)
    node: t.Optional[NodeId] = None
    target: t.Optional[TargetGraph] = None
    target_version: int = 0
    brain_target: t.Optional[TargetGraph] = None
    parent_table: t.List[TableEntry] = dataclasses.field(default_factory=list)
    siblings: t.List[SiblingEntry] = dataclasses.field(default_factory=list)
    table: t.List[TableEntry] = dataclasses.field(default_factory=list)
    sibling_table: t.List[SiblingEntry] = dataclasses.field(default_factory=list)
    instruction: t.Optional[Instruction] = None
    refs: ReferenceVectors = dataclasses.field(default_factory=ReferenceVectors)
    overridden: bool = False
    #: compass heading in the world frame, written by the vehicle layer
    yaw: float = 0.0
    #: brain-only inputs from the mission script, in the world frame
    script_v: Vec3 = dataclasses.field(default_factory=zeros3)
    script_omega: Vec3 = dataclasses.field(default_factory=zeros3)
    wander: bool = False
    wander_heading: float = 0.0
    card_steady: int = 0
    local_goal: t.Optional[t.Tuple[int, str]] = None
    ignore_roots: t.Dict[RobotId, int] = dataclasses.field(default_factory=dict)
    known_roots: t.Dict[RobotId, RobotId] = dataclasses.field(default_factory=dict)
    features: t.Dict[int, SensedFeature] = dataclasses.field(default_factory=dict)
    split_requests: t.List[t.Tuple[RobotId, int]] = dataclasses.field(
        default_factory=list
    )
    pending_leave: bool = False
    stabilizing: bool = False
    #: motion to follow while serving as a flight landmark, own frame
    stabilize_ref: t.Optional[t.Tuple[Vec3, Vec3]] = None
    step: int = 0
    counters: ProtocolCounters = dataclasses.field(default_factory=ProtocolCounters)
    outbox: t.List[Message] = dataclasses.field(default_factory=list)
    _subgraphs: t.Dict[NodeId, TargetGraph] = dataclasses.field(
        default_factory=dict, repr=False
    )

    @classmethod
    def create(
        cls,
        robot_id: RobotId,
        robot_type: RobotType,
        default_target: TargetGraph,
        constants: t.Optional[ProtocolConstants] = None,
        rng: t.Optional[np.random.Generator] = None,
        seed: t.Optional[int] = None,
    ) -> "RobotState":
        rng = np.random.default_rng(seed) if rng is None else rng
        attrs = NodeAttributes.brain(
            robot_id, draw_rank(rng), robot_type, nonce=float(rng.random())
        )
        state = cls(
            robot_id=robot_id,
            robot_type=robot_type,
            attrs=attrs,
            default_target=default_target,
            constants=constants or ProtocolConstants(),
            rng=rng,
            wander_heading=float(rng.uniform(-math.pi, math.pi)),
        )
        _assign_brain_node(state)
        return state

    @property
    def is_brain(self) -> bool:
        return self.parent is None

    @property
    def parent_id(self) -> t.Optional[RobotId]:
        return None if self.parent is None else self.parent.parent

    def linked(self) -> t.List[RobotId]:
        ids = sorted(self.children)
        if self.parent is not None:
            ids.insert(0, self.parent.parent)
        return ids

    def send(self, kind: str, receiver: RobotId, /, **payload: t.Any) -> Message:
        message = Message(kind, self.robot_id, receiver, payload)
        self.outbox.append(message)
        return message


def active_target(state: RobotState) -> TargetGraph:
    return state.default_target if state.brain_target is None else state.brain_target


def is_eligible(state: RobotState) -> bool:
    """Whether the robot's SoNS is led by a robot able to lead the formation."""
    return state.attrs.root_type == state.default_target.root_type


def can_link(
    target: TargetGraph, parent_type: RobotType, child_type: RobotType
) -> bool:
    """Whether ``target`` has a link from a ``parent_type`` to a ``child_type``.

    >>> g = TargetGraph.lookup(n_aerial=2, n_ground=2)
    >>> can_link(g, AERIAL, GROUND), can_link(g, GROUND, GROUND)
    (True, False)
    """
    if target.graph.number_of_edges() == 0:
        return parent_type == child_type
    return any(
        target.node_type(a) == parent_type and target.node_type(b) == child_type
        for a, b in target.graph.edges
    )


def _reset_assignment(state: RobotState) -> None:
    state.node = None
    state.target = None
    state.target_version += 1
    state._subgraphs = {}
    state.instruction = None
    state.parent_table = []
    state.siblings = []


def _assign_brain_node(state: RobotState) -> None:
    _reset_assignment(state)
    target = active_target(state)
    if target.root_type == state.robot_type:
        state.node = target.root
        state.target = target
    for record in state.children.values():
        record.node = None


def become_brain(state: RobotState, regenerate: bool = False) -> RobotState:
    """Drop the parent link and lead own SoNS, keeping all children.

    With ``regenerate`` a fresh rank and nonce are drawn.
    """
    if regenerate:
        state.attrs = dataclasses.replace(
            state.attrs,
            rank=draw_rank(state.rng),
            nonce=float(state.rng.random()),
        )
    state.parent = None
    state.attrs = update_identity(state.attrs)
    _assign_brain_node(state)
    return state


def set_brain_target(state: RobotState, target: TargetGraph) -> None:
    """Swap the formation the robot leads while it is a brain."""
    state.brain_target = target
    if state.is_brain:
        _assign_brain_node(state)
        logger.info(
            "robot %d now leads a %d-node formation", state.robot_id, len(target)
        )


def promote(state: RobotState, rank: RobotRank) -> None:
    """Leave the current parent at the next step with ``rank``."""
    state.attrs = dataclasses.replace(state.attrs, rank=rank, nonce=1.0)
    state.pending_leave = True


def _quality(
    metric: str,
    eligible: bool,
    rank: float,
    card: int,
    nonce: float,
    root_id: RobotId,
) -> t.Tuple[t.Any, ...]:
    if metric == "cardinality":
        return (eligible, card, nonce, root_id)
    if metric == "lexicographic":
        return (eligible, card, rank, nonce, root_id)
    return (eligible, rank, nonce, root_id)


def own_quality(state: RobotState) -> t.Tuple[t.Any, ...]:
    a = state.attrs
    return _quality(
        state.constants.recruitment_metric,
        is_eligible(state),
        a.root_rank,
        a.root_card,
        a.root_nonce,
        a.root_id,
    )


def offer_quality(state: RobotState, offer: RecruitOffer) -> t.Tuple[t.Any, ...]:
    return _quality(
        state.constants.recruitment_metric,
        offer.eligible,
        offer.root_rank,
        offer.root_card,
        offer.root_nonce,
        offer.root_id,
    )


def decide_recruitment(state: RobotState, offer: RecruitOffer) -> Decision:
    """Compare the robot's SoNS with the offering one.

    Both sides evaluate the same totally ordered quality tuple, so they agree on
    who becomes the parent. Equal quality falls through to the exchanged random
    nonces.

    Examples
    --------
    >>> g = TargetGraph.lookup(n_aerial=2, n_ground=0)
    >>> s = RobotState.create(1, AERIAL, g, seed=0)
    >>> s.attrs = dataclasses.replace(s.attrs, rank=0.2, root_rank=0.2)
    >>> offer = RecruitOffer(2, AERIAL, 2, 0.8, AERIAL, 1, 0.5, (2,), True)
    >>> decide_recruitment(s, offer)
    <Decision.BECOME_CHILD: 'becomeChild'>
    >>> decide_recruitment(s, offer._replace(root_rank=0.1))
    <Decision.BECOME_PARENT: 'becomeParent'>
    """
    a = state.attrs
    if offer.root_id == a.root_id or state.robot_id in offer.path:
        return Decision.IGNORE
    if a.ignores_former(offer.root_id):
        return Decision.IGNORE
    if state.ignore_roots.get(offer.root_id, -1) >= state.step:
        return Decision.IGNORE
    if offer_quality(state, offer) > own_quality(state):
        if not can_link(state.default_target, offer.sender_type, state.robot_type):
            return Decision.IGNORE
        return Decision.BECOME_CHILD
    return Decision.BECOME_PARENT


def on_parent_switch(
    state: RobotState,
    new_parent: LinkState,
    identity: t.Optional[IdentityUpdate] = None,
) -> RobotState:
    """Break the old parent link and start the post-switch ignore timer.

    The former root is not recorded for a singleton, which has nobody to keep
    apart from.
    """
    singleton = state.is_brain and not state.children
    former_root = state.attrs.root_id
    old_parent = state.parent_id
    if old_parent is not None and old_parent != new_parent.parent:
        state.send("Expel", old_parent, reason="leave")
    state.parent = new_parent
    if identity is not None:
        state.attrs = update_identity(state.attrs, identity)
        if not singleton and identity.root_id != former_root:
            state.attrs = state.attrs.switched_from(former_root)
    _reset_assignment(state)
    logger.debug(
        "robot %d switched parent %s -> %d",
        state.robot_id,
        old_parent,
        new_parent.parent,
    )
    return state


def split(
    state: RobotState, child: RobotId, hold: int = 0
) -> t.Tuple[RobotState, Message]:
    """Expel ``child``, which becomes the brain of its own subtree.

    With ``hold`` both sides ignore each other's recruitment for that many
    steps. The parent ignores the child for at least the next step, so an
    update the child sent before it heard of the split does not re-adopt it.

    Raises
    ------
    :exc:`exc.UnknownChild`
    """
    if child not in state.children:
        raise exc.UnknownChild(f"robot {child} is not a child of {state.robot_id}")
    del state.children[child]
    state.ignore_roots[child] = state.step + max(int(hold), 1)
    message = state.send("Expel", child, reason="split", hold=int(hold))
    logger.info("robot %d split off robot %d", state.robot_id, child)
    return state, message


def _position_of(state: RobotState, robot: RobotId) -> t.Optional[Vec3]:
    """Last known displacement of a linked robot or a sibling, own frame."""
    if state.parent is not None and robot == state.parent.parent:
        return state.parent.d
    record = state.children.get(robot)
    if record is not None:
        return record.link.d
    own = next((s for s in state.siblings if s.robot_id == state.robot_id), None)
    other = next((s for s in state.siblings if s.robot_id == robot), None)
    if own is None or other is None or state.parent is None:
        return None
    return rotate_vector(state.parent.q, np.asarray(other.d) - np.asarray(own.d))


def handover(
    state: RobotState,
    child: RobotId,
    new_parent: RobotId,
    node: t.Optional[NodeId] = None,
    substitute: bool = False,
) -> t.List[Message]:
    """Ask ``new_parent`` to adopt ``child`` and ``child`` to switch to it.

    The old link is kept until the child reports the switch, so the child is
    never without a parent.

    Raises
    ------
    :exc:`exc.UnknownChild`
    :exc:`exc.HandoverAborted`
        ``new_parent`` is neither linked nor a known sibling
    """
    record = state.children.get(child)
    if record is None:
        raise exc.UnknownChild(f"robot {child} is not a child of {state.robot_id}")
    if new_parent == child or _position_of(state, new_parent) is None:
        raise exc.HandoverAborted(
            f"robot {new_parent} is not reachable from {state.robot_id}"
        )
    record.handed_at = state.step
    state.counters.handovers += 1
    logger.debug("robot %d hands %d to %d", state.robot_id, child, new_parent)
    return [
        state.send("Handover", child, role="new_parent", child=child,
                   new_parent=new_parent),
        state.send(
            "Handover",
            new_parent,
            role="adopt",
            child=child,
            child_type=record.robot_type,
            node=node,
            substitute_for=state.robot_id if substitute else None,
            root_id=state.attrs.root_id,
        ),
    ]


def _vacancy(
    target: TargetGraph, record: ChildRecord, robot_type: RobotType
) -> int:
    if record.node is None or record.node not in target:
        return 0
    wanted = target.target_cardinality(record.node).get(robot_type, 0)
    return wanted - int(record.report.cardinality.get(robot_type, 0))


def redistribute(state: RobotState) -> t.List[Message]:
    """Match children to target children and move the rest where they fit.

    Three phases:

    1. children the parent names as claimants of its vacant slots go up
    2. a same-type child clearly nearer to the own slot substitutes the robot
    3. the remaining children are allocated to the own target children; the
       surplus goes to the nearest matched child with a vacancy of its type,
       else to the parent, else (at the brain) stays unassigned

    Children on their way to a new parent are steered toward it and handed
    over once within ``handover_range``.
    """
    start = len(state.outbox)
    c = state.constants
    records = state.children
    for record in records.values():
        record.bound_for = None
        record.substitute = False
    if state.node is None or state.target is None or not records:
        state.table = []
        state.sibling_table = []
        return []
    target = state.target
    parent = state.parent_id

    if parent is not None:
        for entry in state.parent_table:
            claimant = records.get(entry.claimant) if entry.vacant else None
            if claimant is not None and claimant.robot_type == entry.robot_type:
                claimant.bound_for = parent

    if parent is not None and state.instruction is not None:
        slot = np.asarray(state.instruction.d)
        best: t.Optional[t.Tuple[float, RobotId]] = None
        for cid, record in records.items():
            if record.robot_type != state.robot_type or record.bound_for is not None:
                continue
            remaining = slot - record.link.d
            if not substitution_test(remaining, slot, slot, slot):
                continue
            gain = norm(slot) - norm(remaining)
            if gain >= c.substitution_margin and (best is None or gain > best[0]):
                best = (gain, cid)
        if best is not None:
            records[best[1]].bound_for = parent
            records[best[1]].substitute = True

    slots = target.children(state.node)
    free = [cid for cid in sorted(records) if records[cid].bound_for is None]
    problem = AllocationProblem(
        source_d=[records[cid].link.d for cid in free],
        source_card=[records[cid].total for cid in free],
        target_d=[target.link(state.node, s)[0] for s in slots],
        target_card=[sum(target.target_cardinality(s).values()) for s in slots],
        compatible=np.array(
            [[records[cid].robot_type == target.node_type(s) for s in slots]
             for cid in free],
            dtype=bool,
        ).reshape(len(free), len(slots)),
        bias=np.array(
            [[0.0 if records[cid].node == s else c.k4 for s in slots] for cid in free]
        ).reshape(len(free), len(slots)),
    )
    assignment = allocate(problem)
    state.counters.ops += assignment.ops
    matched: t.Dict[NodeId, RobotId] = {}
    surplus: t.List[RobotId] = []
    for i, cid in enumerate(free):
        j = assignment.target_of(i)
        if j is None:
            records[cid].node = None
            surplus.append(cid)
        else:
            records[cid].node = slots[j]
            matched[slots[j]] = cid

    routed: t.Dict[t.Tuple[RobotId, RobotType], int] = {}
    for cid in surplus:
        record = records[cid]
        options = []
        for kid in matched.values():
            room = _vacancy(target, records[kid], record.robot_type)
            room -= routed.get((kid, record.robot_type), 0)
            if room > 0:
                gap = norm(records[kid].link.d - record.link.d)
                options.append((gap, kid))
        if options:
            kid = min(options)[1]
            record.bound_for = kid
            key = (kid, record.robot_type)
            routed[key] = routed.get(key, 0) + 1
        elif parent is not None:
            record.bound_for = parent

    if state.siblings and state.step % c.reassign_period == 0:
        _crossing_swaps(state)

    for cid in sorted(records):
        record = records[cid]
        if record.bound_for is None:
            continue
        record.node = None
        goal = _position_of(state, record.bound_for)
        if goal is None:
            continue
        gap = goal - record.link.d
        planar = math.hypot(float(gap[0]), float(gap[1]))
        if planar <= c.handover_range and state.step - record.handed_at >= 2:
            try:
                handover(state, cid, record.bound_for, substitute=record.substitute)
            except exc.HandoverAborted as e:
                state.counters.aborted_handovers += 1
                logger.debug(str(e))

    _publish_tables(state, slots, matched, surplus)
    return state.outbox[start:]


def _crossing_swaps(state: RobotState) -> None:
    """Exchange children whose links cross a sibling's link of the same type."""
    own = next((s for s in state.siblings if s.robot_id == state.robot_id), None)
    if own is None:
        return
    for sibling in state.siblings:
        if sibling.robot_id == state.robot_id:
            continue
        for cid, ctype, cd in own.children:
            record = state.children.get(cid)
            if record is None or record.bound_for is not None:
                continue
            for _gid, gtype, gd in sibling.children:
                if gtype == ctype and segments_intersect_2d(own.d, cd, sibling.d, gd):
                    record.bound_for = sibling.robot_id
                    logger.debug(
                        "robot %d: link to %d crosses a link of %d",
                        state.robot_id,
                        cid,
                        sibling.robot_id,
                    )
                    return


def _publish_tables(
    state: RobotState,
    slots: t.List[NodeId],
    matched: t.Mapping[NodeId, RobotId],
    surplus: t.Sequence[RobotId],
) -> None:
    assert state.target is not None and state.node is not None
    records = state.children
    surplus_types = {records[cid].robot_type for cid in surplus}
    grandchildren = [
        (gid, gtype, record.link.d + rotate_vector(record.link.q, gd))
        for record in records.values()
        for gid, gtype, gd, _card in record.grandchildren
    ]
    table = []
    for s in slots:
        robot_type = state.target.node_type(s)
        d_star = state.target.link(state.node, s)[0]
        vacant = s not in matched
        claimant = None
        if vacant and robot_type not in surplus_types:
            options = [
                (norm(pos - d_star), gid)
                for gid, gtype, pos in grandchildren
                if gtype == robot_type
            ]
            if options:
                claimant = min(options)[1]
        table.append(TableEntry(s, robot_type, d_star, vacant, claimant))
    state.table = table
    state.sibling_table = [
        SiblingEntry(
            cid,
            record.link.d,
            tuple(
                (gid, gtype, record.link.d + rotate_vector(record.link.q, gd))
                for gid, gtype, gd, _card in record.grandchildren
            ),
        )
        for cid, record in sorted(records.items())
    ]


def compute_v_local(
    constants: ProtocolConstants,
    robot_type: RobotType,
    target: SensedFeature,
    mode: str = "avoid",
    k1: t.Optional[float] = None,
    k3: t.Optional[float] = None,
) -> Vec3:
    """Velocity toward (``reach``) or away from (``avoid``) a sensed target.

    ``δ`` is the planar clearance to the target. Inside ``k1`` the robot moves
    at ``v_max``; between ``k1`` and ``k3`` the speed follows
    ``-log(δ)·(δ - k1)/k3·k2``, floored at zero and capped at ``v_max``;
    beyond ``k3`` it is zero.

    Examples
    --------
    >>> from sonsim.core import SensedFeature
    >>> c = ProtocolConstants()
    >>> far = SensedFeature(1, "obstacle", vec3(2, 0, 0), quat_identity())
    >>> compute_v_local(c, GROUND, far).tolist()
    [0.0, 0.0, 0.0]
    >>> near = far._replace(d=vec3(0.1, 0, 0))
    >>> compute_v_local(c, GROUND, near).tolist()
    [-1.0, 0.0, 0.0]
    """
    k1 = constants.k1 if k1 is None else k1
    k3 = constants.k3 if k3 is None else k3
    v_max = constants.v_max(robot_type)
    delta, toward = target.clearance()
    if delta >= k3:
        return zeros3()
    if delta < k1:
        speed = v_max
    else:
        taper = -math.log(delta) * (delta - k1) / k3 * constants.k2
        speed = min(v_max, max(0.0, taper))
    sign = 1.0 if mode == "reach" else -1.0
    return sign * speed * toward + 0.0


def compute_omega_local(
    constants: ProtocolConstants, q_target: UnitQuat, mode: str = "reach"
) -> Vec3:
    """Angular equivalent of :func:`compute_v_local` on a relative orientation."""
    r = quat_to_rotation_vector(q_target)
    angle = norm(r)
    if angle == 0.0 or angle >= constants.k3:
        return zeros3()
    if angle < constants.k1:
        speed = constants.omega_max
    else:
        taper = -math.log(angle) * (angle - constants.k1) / constants.k3 * constants.k2
        speed = min(constants.omega_max, max(0.0, taper))
    sign = 1.0 if mode == "reach" else -1.0
    return sign * speed * unit(r)


def compute_v_hierarchical(
    constants: ProtocolConstants, d_star: Vec3, angular: bool = False
) -> Vec3:
    """Velocity toward the slot the parent assigned.

    With ``angular`` the same law runs on a rotation vector with
    ``omega_default``, ``k4_ang`` and ``k5_ang``.

    Examples
    --------
    >>> c = ProtocolConstants()
    >>> compute_v_hierarchical(c, vec3(0.2, 0, 0)).tolist()
    [0.5, 0.0, 0.0]
    >>> compute_v_hierarchical(c, vec3(0.01, 0, 0)).tolist()
    [0.0, 0.0, 0.0]
    """
    if angular:
        speed, k4, k5 = constants.omega_default, constants.k4_ang, constants.k5_ang
    else:
        speed, k4, k5 = constants.v_default, constants.k4, constants.k5
    n = norm(d_star)
    if n > k4:
        return speed * unit(d_star)
    if n > k5:
        return speed * (n - k5) / k4 * unit(d_star)
    return zeros3()


def _link_q(state: RobotState, robot: RobotId) -> t.Optional[UnitQuat]:
    if state.parent is not None and robot == state.parent.parent:
        return state.parent.q
    record = state.children.get(robot)
    return None if record is None else record.link.q


def propagate_global_velocity(
    state: RobotState, received: t.Sequence[GlobalInput]
) -> t.Tuple[t.Tuple[Vec3, Vec3], t.List[Message]]:
    """Rotate received global vectors into the own frame, sum and forward them.

    Each vector is forwarded to every link except the one it came from.
    """
    v_sum, omega_sum = zeros3(), zeros3()
    forwards: t.List[Message] = []
    for item in received:
        q = _link_q(state, item.sender)
        if q is None:
            continue
        v = rotate_vector(q, item.v)
        omega = rotate_vector(q, item.omega)
        v_sum = v_sum + v
        omega_sum = omega_sum + omega
        for other in state.linked():
            if other != item.sender:
                forwards.append(
                    state.send(
                        "GlobalVelocity", other, v=v, omega=omega, origin=item.sender
                    )
                )
    return (v_sum, omega_sum), forwards


def propagate_sensor_feature(
    state: RobotState, feature: SensedFeature, sender: t.Optional[RobotId] = None
) -> t.Optional[Message]:
    """Record a feature in the own frame and forward it upstream if relevant.

    A feature from a child is converted with ``d_ia = d_ij + RT(q_ij, d_ja)``
    and ``q_ia = H(q_ij, q_ja)``. Features over a stale link are dropped.
    """
    if sender is not None:
        record = state.children.get(sender)
        if record is None or record.link.staleness > 1:
            return None
        feature = feature.moved(
            record.link.d + rotate_vector(record.link.q, feature.d),
            hamilton(record.link.q, feature.q),
        )
    if feature.feature_id in state.features:
        return None
    state.features[feature.feature_id] = feature
    if state.parent is None or feature.kind not in FORWARD_KINDS:
        return None
    return state.send(
        "SensorFeature",
        state.parent.parent,
        feature_id=feature.feature_id,
        kind=feature.kind,
        d=feature.d,
        q=feature.q,
        shape=feature.shape,
        radius=feature.radius,
        half_x=feature.half_x,
        half_y=feature.half_y,
        width=feature.width,
    )


def _accept_inbox(state: RobotState, inbox: t.Iterable[Message]) -> t.List[Message]:
    accepted = []
    for message in inbox:
        if message.receiver != state.robot_id or not message.is_valid():
            state.counters.dropped_msgs += 1
            logger.warning(
                "robot %d dropped malformed %s from %s",
                state.robot_id,
                message.kind,
                message.sender,
            )
            continue
        accepted.append(message)
    state.counters.ops += len(accepted)
    return accepted


def _refresh_links(
    state: RobotState, neighbours: t.Mapping[RobotId, SensedNeighbor]
) -> None:
    ceiling = state.constants.staleness_ceiling
    if state.parent is not None:
        seen = neighbours.get(state.parent.parent)
        if seen is not None:
            state.parent.refresh(seen.d, seen.q)
        else:
            state.parent.age()
        if state.parent.expired(ceiling):
            logger.debug(
                "robot %d lost parent %d", state.robot_id, state.parent.parent
            )
            become_brain(state, regenerate=True)
    for cid in sorted(state.children):
        record = state.children[cid]
        seen = neighbours.get(cid)
        if seen is not None:
            record.link.refresh(seen.d, seen.q)
        else:
            record.link.age()
        record.silent += 1
        if record.link.expired(ceiling) or record.silent > ceiling:
            logger.debug("robot %d lost child %d", state.robot_id, cid)
            del state.children[cid]


def _add_child(
    state: RobotState,
    child: RobotId,
    robot_type: RobotType,
    neighbours: t.Mapping[RobotId, SensedNeighbor],
    report: t.Optional[ChildReport] = None,
) -> t.Optional[ChildRecord]:
    if (
        child == state.robot_id
        or child in state.children
        or child == state.parent_id
        or child in state.attrs.path
        or len(state.children) >= state.constants.max_children
    ):
        return None
    seen = neighbours.get(child)
    link = LinkState(parent=state.robot_id, child=child)
    if seen is not None:
        link.refresh(seen.d, seen.q)
    record = ChildRecord(
        robot_type=robot_type,
        link=link,
        report=report or ChildReport({robot_type: 1}, 1),
    )
    state.children[child] = record
    return record


def _handle_membership(
    state: RobotState,
    messages: t.Sequence[Message],
    neighbours: t.Mapping[RobotId, SensedNeighbor],
) -> None:
    by_kind: t.Dict[str, t.List[Message]] = {}
    for message in messages:
        by_kind.setdefault(message.kind, []).append(message)

    for message in by_kind.get("Expel", []):
        reason = message.payload["reason"]
        if reason == "leave":
            state.children.pop(message.sender, None)
        elif message.sender == state.parent_id:
            former_root = state.attrs.root_id
            become_brain(state, regenerate=reason == "split")
            hold = int(message.payload.get("hold", 0) or 0)
            if hold:
                state.ignore_roots[former_root] = state.step + hold
            logger.debug("robot %d expelled (%s)", state.robot_id, reason)

    for message in by_kind.get("RecruitAccept", []):
        p = message.payload
        report = ChildReport(dict(p["card"]), int(p["height"]))
        if len(state.children) >= state.constants.max_children:
            state.send("Expel", message.sender, reason="reject", hold=REJECT_HOLD)
            continue
        if _add_child(state, message.sender, str(p["robot_type"]), neighbours, report):
            state.counters.recruits += 1
            logger.debug("robot %d recruited %d", state.robot_id, message.sender)

    for message in by_kind.get("Handover", []):
        p = message.payload
        if p["role"] == "new_parent":
            new_parent = p.get("new_parent")
            if message.sender != state.parent_id or new_parent is None:
                continue
            seen = neighbours.get(new_parent)
            if seen is None or new_parent in state.children:
                state.counters.aborted_handovers += 1
                logger.debug(
                    "robot %d cannot switch to %s", state.robot_id, new_parent
                )
                continue
            link = LinkState(parent=new_parent, child=state.robot_id)
            link.refresh(seen.d, seen.q)
            on_parent_switch(state, link)
        elif p["role"] == "adopt":
            linked = message.sender in state.linked()
            if not linked and p.get("root_id") != state.attrs.root_id:
                continue
            child = int(p["child"])
            if child not in neighbours:
                continue
            record = _add_child(
                state, child, str(p.get("child_type", GROUND)), neighbours
            )
            if record is None:
                continue
            replaced = state.children.get(p.get("substitute_for"))
            if replaced is not None:
                record.node, replaced.node = replaced.node, None

    for message in by_kind.get("AttributeUpdate", []):
        p = message.payload
        if p["direction"] == "down":
            if message.sender != state.parent_id:
                continue
            path = tuple(p["path"])
            if state.robot_id in path:
                logger.debug("robot %d is on a parent cycle", state.robot_id)
                state.send("Expel", message.sender, reason="leave")
                become_brain(state, regenerate=True)
                continue
            identity = IdentityUpdate(
                int(p["root_id"]),
                float(p["root_rank"]),
                str(p["root_type"]),
                int(p["root_card"]),
                float(p["root_nonce"]),
                path,
            )
            state.attrs = update_identity(state.attrs, identity)
            for root, until in p.get("ignore", ()):
                state.ignore_roots[root] = max(state.ignore_roots.get(root, -1), until)
            continue
        names_me = p["parent"] == state.robot_id
        if state.ignore_roots.get(message.sender, -1) >= state.step:
            names_me = False
        record = state.children.get(message.sender)
        if record is None:
            if names_me and message.sender in neighbours:
                record = _add_child(
                    state, message.sender, str(p["robot_type"]), neighbours
                )
            if record is None:
                continue
        elif not names_me:
            del state.children[message.sender]
            continue
        record.robot_type = str(p["robot_type"])
        record.report = ChildReport(dict(p["card"]), int(p["height"]))
        record.overridden = bool(p["overridden"])
        record.settled = bool(p.get("settled", False))
        record.grandchildren = [
            (int(g[0]), str(g[1]), np.asarray(g[2], dtype=np.float64), int(g[3]))
            for g in p["children"]
        ]
        record.silent = 0

    state.attrs = update_cardinality_height(
        state.attrs, [r.report for r in state.children.values()]
    )
    if state.is_brain:
        state.attrs = update_identity(state.attrs)

    for message in by_kind.get("TargetAssignment", []):
        if message.sender != state.parent_id:
            continue
        p = message.payload
        node, target = p["node"], p["target"]
        if node != state.node or target is not state.target:
            state.node = node
            state.target = target
            state.target_version += 1
            state._subgraphs = {}
        state.parent_table = list(p["table"])
        state.siblings = list(p["siblings"])

    for message in by_kind.get("ActuationInstruction", []):
        if message.sender != state.parent_id:
            continue
        p = message.payload
        state.instruction = Instruction(
            np.asarray(p["d"], dtype=np.float64),
            np.asarray(p["q"], dtype=np.float64),
            float(p["damping"]),
            state.step,
        )

    for message in by_kind.get("StabilizationOverride", []):
        seen = neighbours.get(message.sender)
        if message.sender not in state.linked() or seen is None:
            continue
        p = message.payload
        state.stabilizing = bool(p["active"])
        state.stabilize_ref = None
        if state.stabilizing:
            state.stabilize_ref = (
                rotate_vector(seen.q, np.asarray(p.get("v", zeros3()))),
                rotate_vector(seen.q, np.asarray(p.get("omega", zeros3()))),
            )


def _handle_recruitment(
    state: RobotState,
    messages: t.Sequence[Message],
    neighbours: t.Mapping[RobotId, SensedNeighbor],
) -> None:
    best: t.Optional[RecruitOffer] = None
    for message in messages:
        if message.kind != "Recruit":
            continue
        offer = RecruitOffer.from_message(message)
        state.known_roots[offer.sender] = offer.root_id
        if offer.sender not in neighbours:
            continue
        state.counters.ops += 1
        if decide_recruitment(state, offer) is not Decision.BECOME_CHILD:
            continue
        if best is None or offer_quality(state, offer) > offer_quality(state, best):
            best = offer
    if best is None:
        return
    seen = neighbours[best.sender]
    link = LinkState(parent=best.sender, child=state.robot_id)
    link.refresh(seen.d, seen.q)
    on_parent_switch(state, link, best.identity())
    state.send(
        "RecruitAccept",
        best.sender,
        robot_type=state.robot_type,
        card=dict(state.attrs.cardinality),
        height=state.attrs.height,
    )


def _process_splits(state: RobotState) -> None:
    requests, state.split_requests = state.split_requests, []
    for child, hold in requests:
        try:
            split(state, child, hold)
        except exc.UnknownChild as e:
            logger.warning(str(e))
    if state.pending_leave:
        state.pending_leave = False
        if state.parent is not None:
            state.send("Expel", state.parent.parent, reason="leave")
        become_brain(state)
        logger.info("robot %d promoted to brain", state.robot_id)


def _propagate_sensing(
    state: RobotState,
    messages: t.Sequence[Message],
    features: t.Sequence[SensedFeature],
) -> None:
    state.features = {}
    for feature in features:
        propagate_sensor_feature(state, feature)
    for message in messages:
        if message.kind != "SensorFeature":
            continue
        p = message.payload
        feature = SensedFeature(
            feature_id=int(p["feature_id"]),
            kind=str(p["kind"]),
            d=np.asarray(p["d"], dtype=np.float64),
            q=np.asarray(p["q"], dtype=np.float64),
            shape=str(p.get("shape", "point")),
            radius=float(p.get("radius", 0.0)),
            half_x=float(p.get("half_x", 0.0)),
            half_y=float(p.get("half_y", 0.0)),
            width=float(p.get("width", 0.0)),
        )
        propagate_sensor_feature(state, feature, message.sender)


def _v_local(
    state: RobotState,
    features: t.Sequence[SensedFeature],
    neighbours: t.Sequence[SensedNeighbor],
) -> t.Tuple[Vec3, Vec3]:
    c = state.constants
    v, omega = zeros3(), zeros3()
    if state.robot_type == GROUND:
        for feature in features:
            if feature.kind in AVOID_KINDS:
                v = v + compute_v_local(c, state.robot_type, feature, "avoid")
    for n in neighbours:
        if n.robot_type != state.robot_type:
            continue
        point = SensedFeature(-n.robot_id, "robot", n.d, n.q)
        v = v + compute_v_local(
            c, state.robot_type, point, "avoid", k1=c.robot_k1, k3=c.robot_k3
        )
    if state.local_goal is not None:
        goal = state.features.get(state.local_goal[0])
        if goal is not None:
            v = v + compute_v_local(c, state.robot_type, goal, state.local_goal[1])
            omega = omega + compute_omega_local(c, goal.q, state.local_goal[1])
    v[2] = 0.0
    v_max = c.v_max(state.robot_type)
    if norm(v) > v_max:
        v = v_max * unit(v)
    return v, omega


def is_settled(state: RobotState) -> bool:
    """Whether every robot below ``state`` is fresh and on its slot.

    Children report their own subtree upward, so at the brain this covers the
    whole SoNS with a delay of one step per level. A child that avoids an
    obstacle or a wall is not held to its slot.

    Examples
    --------
    >>> g = TargetGraph.lookup(n_aerial=1, n_ground=2)
    >>> is_settled(RobotState.create(4, AERIAL, g, seed=1))
    True
    """
    c = state.constants
    for record in state.children.values():
        if record.link.staleness > 1 or not record.settled:
            return False
        if record.node is None:
            if record.bound_for is not None:
                return False
            continue
        if record.overridden:
            continue
        if state.target is None or state.node is None:
            return False
        gap = state.target.link(state.node, record.node)[0] - record.link.d
        if math.hypot(float(gap[0]), float(gap[1])) > c.settle_range:
            return False
    return True


def _formation_reach(state: RobotState) -> float:
    """Planar distance from the brain to its farthest target slot."""
    target = active_target(state)
    reach = 0.0
    for node in target:
        p = target.position_of(node)
        reach = max(reach, math.hypot(float(p[0]), float(p[1])))
    return reach


def _wander_velocity(state: RobotState) -> Vec3:
    """Wander heading in the own frame, reflected off walls near the formation.

    Walls forwarded by children count, and the reflection distance grows with
    the formation so that no member is driven into a wall.
    """
    c = state.constants
    heading = vec3(math.cos(state.wander_heading), math.sin(state.wander_heading))
    to_world = yaw_quat(state.yaw)
    margin = c.k3 + _formation_reach(state)
    for feature in state.features.values():
        if feature.kind != "wall":
            continue
        dist, toward = feature.clearance()
        if dist >= margin:
            continue
        normal = -rotate_vector(to_world, toward)
        if float(np.dot(heading, normal)) < 0.0:
            heading = heading - 2.0 * float(np.dot(heading, normal)) * normal
            state.wander_heading = math.atan2(float(heading[1]), float(heading[0]))
    return rotate_vector(quat_inverse(to_world), c.v_wander * heading)


def _update_references(
    state: RobotState,
    messages: t.Sequence[Message],
    features: t.Sequence[SensedFeature],
    sensed: t.Sequence[SensedNeighbor],
) -> None:
    c = state.constants
    refs = ReferenceVectors()
    v_local, omega_local = _v_local(state, features, sensed)
    refs.v_local, refs.omega_local = v_local, omega_local
    state.overridden = norm(v_local) > 0.0
    child_overridden = any(r.overridden for r in state.children.values())
    damping = c.damping if child_overridden else 1.0

    received = [
        GlobalInput(
            np.asarray(m.payload["v"], dtype=np.float64),
            np.asarray(m.payload["omega"], dtype=np.float64),
            m.sender,
        )
        for m in messages
        if m.kind == "GlobalVelocity"
    ]
    (v_global, omega_global), _ = propagate_global_velocity(state, received)

    if state.is_brain:
        to_own = quat_inverse(yaw_quat(state.yaw))
        source = rotate_vector(to_own, state.script_v)
        incomplete = state.attrs.total_cardinality < len(active_target(state))
        if (
            state.wander
            and is_eligible(state)
            and incomplete
            and not np.any(state.script_v)
            and state.card_steady >= c.wander_patience
            and is_settled(state)
        ):
            source = _wander_velocity(state)
        source = source * damping
        omega_source = np.array(state.script_omega, dtype=np.float64)
        if np.any(source) or np.any(omega_source):
            for child in sorted(state.children):
                state.send(
                    "GlobalVelocity",
                    child,
                    v=source,
                    omega=omega_source,
                    origin=state.robot_id,
                )
        refs.v_global = v_global + source
        refs.omega_global = omega_global + omega_source
    else:
        refs.v_global, refs.omega_global = v_global, omega_global
        instruction = state.instruction
        if instruction is not None and state.step - instruction.step <= INSTRUCTION_TTL:
            d = np.array(instruction.d, dtype=np.float64)
            if state.robot_type == GROUND:
                d[2] = 0.0
            refs.v_hier = compute_v_hierarchical(c, d) * instruction.damping * damping
            r = quat_to_rotation_vector(instruction.q)
            refs.omega_hier = compute_v_hierarchical(c, vec3(0, 0, r[2]), angular=True)
    if state.stabilizing and state.stabilize_ref is not None:
        refs = ReferenceVectors(
            v_global=state.stabilize_ref[0], omega_global=state.stabilize_ref[1]
        )
    state.refs = refs


def _subgraph(state: RobotState, node: NodeId) -> TargetGraph:
    assert state.target is not None
    graph = state._subgraphs.get(node)
    if graph is None:
        graph = state.target.subgraph(node)
        state._subgraphs[node] = graph
    return graph


def _broadcast(
    state: RobotState, neighbours: t.Mapping[RobotId, SensedNeighbor]
) -> None:
    c = state.constants
    a = state.attrs
    identity = a.identity()
    ignore = [(r, u) for r, u in sorted(state.ignore_roots.items()) if u >= state.step]

    if state.parent is not None:
        state.send(
            "AttributeUpdate",
            state.parent.parent,
            direction="up",
            parent=state.parent.parent,
            robot_type=state.robot_type,
            card=dict(a.cardinality),
            height=a.height,
            overridden=state.overridden,
            settled=is_settled(state),
            children=[
                (cid, r.robot_type, r.link.d, r.total)
                for cid, r in sorted(state.children.items())
            ],
        )

    any_override = state.overridden or any(
        r.overridden for r in state.children.values()
    )
    damping = c.damping if any_override else 1.0
    table_key = tuple((e.node, e.vacant, e.claimant) for e in state.table)
    for cid, record in sorted(state.children.items()):
        state.send(
            "AttributeUpdate",
            cid,
            direction="down",
            root_id=identity.root_id,
            root_rank=identity.root_rank,
            root_type=identity.root_type,
            root_card=identity.root_card,
            root_nonce=identity.root_nonce,
            path=identity.path,
            ignore=ignore,
        )
        key = (record.node, state.target_version, table_key)
        due = state.step - record.assigned_at >= c.reassign_period
        if key != record.sent_key or due:
            assigned = record.node is not None and state.target is not None
            sub = _subgraph(state, t.cast(NodeId, record.node)) if assigned else None
            state.send(
                "TargetAssignment",
                cid,
                node=record.node if assigned else None,
                target=sub,
                table=state.table,
                siblings=state.sibling_table,
            )
            record.sent_key = key
            record.assigned_at = state.step
        instruction = _instruction_for(state, record)
        if instruction is not None:
            d, q = instruction
            state.send("ActuationInstruction", cid, d=d, q=q, damping=damping)

    if is_eligible(state):
        for nid in sorted(neighbours):
            if nid in state.children or nid == state.parent_id:
                continue
            same = state.known_roots.get(nid) == a.root_id
            if same and state.step % c.reassign_period:
                continue
            state.send(
                "Recruit",
                nid,
                root_id=a.root_id,
                root_rank=a.root_rank,
                root_type=a.root_type,
                root_card=a.root_card,
                root_nonce=a.root_nonce,
                path=identity.path,
                eligible=True,
                robot_type=state.robot_type,
            )


def _instruction_for(
    state: RobotState, record: ChildRecord
) -> t.Optional[t.Tuple[Vec3, UnitQuat]]:
    """Slot error of a child in the child's frame."""
    inverse = quat_inverse(record.link.q)
    if record.node is not None and state.target is not None and state.node is not None:
        d_star, q_star = state.target.link(state.node, record.node)
        error = rotate_vector(inverse, d_star - record.link.d)
        return error, hamilton(inverse, q_star)
    if record.bound_for is None:
        return None
    goal = _position_of(state, record.bound_for)
    if goal is None:
        return None
    gap = np.array(goal - record.link.d, dtype=np.float64)
    gap[2] = 0.0
    if record.robot_type == AERIAL:
        # stop short of another aerial robot
        gap = gap - unit(gap) * min(norm(gap), 1.0)
    return rotate_vector(inverse, gap), quat_identity()


def step_protocol(
    state: RobotState,
    inbox: t.Iterable[Message],
    sensed: t.Sequence[SensedNeighbor],
    features: t.Sequence[SensedFeature] = (),
) -> t.Tuple[RobotState, t.List[Message], t.Tuple[Vec3, Vec3]]:
    """Advance one robot by one tick.

    Parameters
    ----------
    state : RobotState
    inbox : iterable of :class:`Message`
        messages sent to this robot in the previous tick
    sensed : sequence of :class:`~sonsim.core.SensedNeighbor`
        robots seen this tick, directly or virtually
    features : sequence of :class:`~sonsim.core.SensedFeature`
        environmental features seen this tick

    Returns
    -------
    tuple
        the state, the outgoing messages, and ``(v*, ω*)`` in the own frame

    Examples
    --------
    >>> g = TargetGraph.lookup(n_aerial=2, n_ground=0)
    >>> s = RobotState.create(1, AERIAL, g, seed=0)
    >>> s, out, (v, w) = step_protocol(s, [], [])
    >>> s.is_brain, out, v.tolist()
    (True, [], [0.0, 0.0, 0.0])
    """
    state.step += 1
    state.counters.ops = 0
    state.outbox = []
    neighbours = {n.robot_id: n for n in sensed}
    messages = _accept_inbox(state, inbox)
    previous_card = state.attrs.total_cardinality

    _refresh_links(state, neighbours)
    _handle_membership(state, messages, neighbours)
    state.attrs = state.attrs.aged()
    state.ignore_roots = {
        r: u for r, u in state.ignore_roots.items() if u >= state.step
    }
    _handle_recruitment(state, messages, neighbours)
    redistribute(state)
    _process_splits(state)
    _propagate_sensing(state, messages, features)
    _update_references(state, messages, features, sensed)
    _broadcast(state, neighbours)

    if state.attrs.total_cardinality == previous_card:
        state.card_steady += 1
    else:
        state.card_steady = 0
    out, state.outbox = state.outbox, []
    return state, out, state.refs.fused()
