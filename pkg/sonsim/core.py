"""SoNS data model.

sonsim.core
~~~~~~~~~~~

Identities, ranks, hierarchy links, target graphs, and the node attributes a
robot derives from its parent (identity) and its children (cardinality and
height).

"""
import dataclasses
import logging
import typing as t

import networkx as nx
import numpy as np

from . import exc, formats
from .geometry import (
    UnitQuat,
    Vec3,
    compose_pose,
    quat,
    quat_identity,
    quat_inverse,
    rotate_vector,
    unit,
    vec3,
)

logger = logging.getLogger(__name__)

AERIAL = "aerial"
GROUND = "ground"
ROBOT_TYPES = (AERIAL, GROUND)

RobotId = int
RobotRank = float
RobotType = str

#: Hard limit on the children of one target node (and one robot)
MAX_CHILDREN = 8

#: Decimal digits kept of a drawn rank
RANK_DIGITS = 15


def draw_rank(rng: np.random.Generator) -> RobotRank:
    """Uniform rank in ``[0, 1]`` rounded to ``RANK_DIGITS`` digits."""
    return round(float(rng.random()), RANK_DIGITS)


class IdentityUpdate(t.NamedTuple):
    """What a parent tells its children about the SoNS they belong to."""

    root_id: RobotId
    root_rank: RobotRank
    root_type: RobotType
    root_card: int = 1
    root_nonce: float = 0.0
    #: robot ids from the brain down to the sender, inclusive
    path: t.Tuple[RobotId, ...] = ()


class ChildReport(t.NamedTuple):
    cardinality: t.Mapping[RobotType, int]
    height: int


@dataclasses.dataclass(frozen=True)
class NodeAttributes:

    """Self-organized attributes of one robot.

    ``path`` lists the ancestors from the brain down to the parent; it is empty
    for a brain.

    Examples
    --------
    >>> a = NodeAttributes.brain(3, 0.25, AERIAL)
    >>> a.is_brain, a.root_id, a.height, dict(a.cardinality)
    (True, 3, 1, {'aerial': 1})
    """

    robot_id: RobotId
    rank: RobotRank
    robot_type: RobotType
    root_id: RobotId
    root_rank: RobotRank
    root_type: RobotType
    root_card: int = 1
    root_nonce: float = 0.0
    nonce: float = 0.0
    path: t.Tuple[RobotId, ...] = ()
    former_root_id: t.Optional[RobotId] = None
    steps_since_former: int = 0
    cardinality: t.Mapping[RobotType, int] = dataclasses.field(default_factory=dict)
    height: int = 1

    @classmethod
    def brain(
        cls,
        robot_id: RobotId,
        rank: RobotRank,
        robot_type: RobotType,
        nonce: float = 0.0,
    ) -> "NodeAttributes":
        return cls(
            robot_id=robot_id,
            rank=rank,
            robot_type=robot_type,
            root_id=robot_id,
            root_rank=rank,
            root_type=robot_type,
            root_nonce=nonce,
            nonce=nonce,
            cardinality={robot_type: 1},
        )

    @property
    def is_brain(self) -> bool:
        return self.root_id == self.robot_id

    @property
    def total_cardinality(self) -> int:
        return sum(self.cardinality.values())

    def identity(self) -> IdentityUpdate:
        """The update this robot sends downstream."""
        return IdentityUpdate(
            root_id=self.root_id,
            root_rank=self.root_rank,
            root_type=self.root_type,
            root_card=self.root_card,
            root_nonce=self.root_nonce,
            path=self.path + (self.robot_id,),
        )

    def report(self) -> ChildReport:
        """The update this robot sends upstream."""
        return ChildReport(dict(self.cardinality), self.height)

    def switched_from(self, former_root: RobotId) -> "NodeAttributes":
        return dataclasses.replace(
            self, former_root_id=former_root, steps_since_former=0
        )

    def ignores_former(self, root_id: RobotId) -> bool:
        """Whether recruitment from ``root_id`` is still suppressed."""
        return (
            self.former_root_id is not None
            and root_id == self.former_root_id
            and self.steps_since_former < self.height
        )

    def aged(self) -> "NodeAttributes":
        if self.former_root_id is None:
            return self
        return dataclasses.replace(self, steps_since_former=self.steps_since_former + 1)


def update_identity(
    attrs: NodeAttributes, from_parent: t.Optional[IdentityUpdate] = None
) -> NodeAttributes:
    """Adopt the parent's SoNS identity, or own identity without a parent.

    Examples
    --------
    >>> a = NodeAttributes.brain(2, 0.1, GROUND)
    >>> update_identity(a, IdentityUpdate(7, 0.9, AERIAL, path=(7,))).root_id
    7
    >>> update_identity(a).root_rank
    0.1
    """
    if from_parent is None:
        return dataclasses.replace(
            attrs,
            root_id=attrs.robot_id,
            root_rank=attrs.rank,
            root_type=attrs.robot_type,
            root_card=attrs.total_cardinality,
            root_nonce=attrs.nonce,
            path=(),
        )
    return dataclasses.replace(
        attrs,
        root_id=from_parent.root_id,
        root_rank=from_parent.root_rank,
        root_type=from_parent.root_type,
        root_card=from_parent.root_card,
        root_nonce=from_parent.root_nonce,
        path=tuple(from_parent.path),
    )


def update_cardinality_height(
    attrs: NodeAttributes, child_reports: t.Iterable[ChildReport]
) -> NodeAttributes:
    """Sum the children's per-type counts and take the longest path down.

    Examples
    --------
    >>> a = NodeAttributes.brain(1, 0.5, AERIAL)
    >>> b = update_cardinality_height(
    ...     a, [ChildReport({AERIAL: 1}, 1), ChildReport({GROUND: 1}, 1)]
    ... )
    >>> dict(b.cardinality), b.height
    ({'aerial': 2, 'ground': 1}, 2)
    """
    card: t.Dict[RobotType, int] = {attrs.robot_type: 1}
    height = 1
    for report in child_reports:
        for robot_type, count in report.cardinality.items():
            card[robot_type] = card.get(robot_type, 0) + int(count)
        height = max(height, report.height + 1)
    return dataclasses.replace(attrs, cardinality=card, height=height)


@dataclasses.dataclass
class LinkState:

    """One end's view of a parent-child link.

    ``d`` and ``q`` are the counterpart's pose in the owner's frame as last
    sensed; ``staleness`` counts steps since then.
    """

    parent: RobotId
    child: RobotId
    d: Vec3 = dataclasses.field(default_factory=lambda: vec3())
    q: UnitQuat = dataclasses.field(default_factory=quat_identity)
    staleness: int = 0

    def refresh(self, d: Vec3, q: UnitQuat) -> None:
        self.d = np.asarray(d, dtype=np.float64)
        self.q = np.asarray(q, dtype=np.float64)
        self.staleness = 0

    def age(self) -> int:
        self.staleness += 1
        return self.staleness

    def expired(self, ceiling: int) -> bool:
        return self.staleness >= ceiling


class SensedNeighbor(t.NamedTuple):
    """A robot seen this step, in the observer's frame.

    ``virtual`` marks a pose composed through a relay rather than observed.
    """

    robot_id: RobotId
    robot_type: RobotType
    d: Vec3
    q: UnitQuat
    virtual: bool = False


#: Feature kinds a robot steers around
AVOID_KINDS = ("obstacle", "wall")

FEATURE_KINDS = ("obstacle", "wall", "destination", "opening", "landmark")


class SensedFeature(t.NamedTuple):
    """An environmental feature seen this step, in the observer's frame.

    ``shape`` is ``point``, ``disc`` (``radius``) or ``box`` (``half_x`` by
    ``half_y`` along the feature's own axes). Openings carry their ``width``.

    Examples
    --------
    >>> f = SensedFeature(1, "obstacle", vec3(2, 0, -1.5), quat_identity(),
    ...                   shape="disc", radius=0.5)
    >>> dist, toward = f.clearance()
    >>> dist, toward.tolist()
    (1.5, [1.0, 0.0, 0.0])
    """

    feature_id: int
    kind: str
    d: Vec3
    q: UnitQuat
    shape: str = "point"
    radius: float = 0.0
    half_x: float = 0.0
    half_y: float = 0.0
    width: float = 0.0

    def clearance(self) -> t.Tuple[float, Vec3]:
        """Planar distance to the boundary and the unit vector toward it."""
        planar = np.array([self.d[0], self.d[1], 0.0])
        if self.shape != "box":
            dist = float(np.linalg.norm(planar)) - self.radius
            return max(dist, 0.0), unit(planar)
        # observer position in the feature's frame
        r = rotate_vector(quat_inverse(self.q), -planar)
        closest = np.array(
            [
                np.clip(r[0], -self.half_x, self.half_x),
                np.clip(r[1], -self.half_y, self.half_y),
                0.0,
            ]
        )
        toward = rotate_vector(self.q, closest - np.array([r[0], r[1], 0.0]))
        toward[2] = 0.0
        dist = float(np.linalg.norm(toward))
        if dist == 0.0:
            return 0.0, unit(planar)
        return dist, toward / dist

    def moved(self, d: Vec3, q: UnitQuat) -> "SensedFeature":
        return self._replace(d=np.asarray(d, dtype=np.float64), q=q)

    @property
    def nbytes(self) -> int:
        return (
            formats.ID_BYTES
            + formats.FLAG_BYTES
            + formats.VEC3_BYTES
            + formats.QUAT_BYTES
            + 4 * formats.REAL_BYTES
        )


NodeId = int


class TargetGraph:

    """The brain's desired hierarchy.

    A rooted tree on a :class:`networkx.DiGraph`. Nodes carry the required
    robot ``type``; edges carry the target displacement ``d`` and orientation
    ``q`` of the child in the parent's frame. Subgraphs handed down the SoNS
    keep the node ids of the full graph.

    Examples
    --------
    >>> g = TargetGraph.lookup(n_aerial=1, n_ground=2)
    >>> len(g), g.root, g.children(0)
    (3, 0, [1, 2])
    >>> dict(g.target_cardinality(0))
    {'aerial': 1, 'ground': 2}
    """

    def __init__(
        self, graph: t.Optional["nx.DiGraph[NodeId]"] = None, root: NodeId = 0
    ) -> None:
        self.graph: "nx.DiGraph[NodeId]" = nx.DiGraph() if graph is None else graph
        self._root = root

    @classmethod
    def single(cls, robot_type: RobotType, node: NodeId = 0) -> "TargetGraph":
        g = cls(root=node)
        g.add_node(node, robot_type)
        return g

    def __len__(self) -> int:
        return int(self.graph.number_of_nodes())

    def __contains__(self, node: object) -> bool:
        return node in self.graph

    def __iter__(self) -> t.Iterator[NodeId]:
        return iter(sorted(self.graph.nodes))

    def __repr__(self) -> str:
        return f"TargetGraph(root={self.root}, nodes={len(self)})"

    @property
    def nbytes(self) -> int:
        """Encoded size when carried in a message."""
        return len(self) * formats.TARGET_NODE_BYTES

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TargetGraph):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    @property
    def root(self) -> NodeId:
        return self._root

    @property
    def root_type(self) -> RobotType:
        return self.node_type(self.root)

    def add_node(self, node: NodeId, robot_type: RobotType) -> None:
        if robot_type not in ROBOT_TYPES:
            raise exc.InvalidTargetGraph(f"node {node} has unknown type {robot_type!r}")
        self.graph.add_node(node, type=robot_type)

    def add_link(
        self,
        parent: NodeId,
        child: NodeId,
        d: Vec3,
        q: t.Optional[UnitQuat] = None,
    ) -> None:
        for node in (parent, child):
            if node not in self.graph:
                raise exc.UnknownTargetNode(f"node {node} is not in the target graph")
        self.graph.add_edge(
            parent,
            child,
            d=np.asarray(d, dtype=np.float64),
            q=quat_identity() if q is None else np.asarray(q, dtype=np.float64),
        )

    def validate(self, max_children: int = MAX_CHILDREN) -> "TargetGraph":
        """Check the tree shape and the per-node child limit.

        Raises
        ------
        :exc:`exc.InvalidTargetGraph`
        """
        if len(self) == 0:
            raise exc.InvalidTargetGraph("target graph is empty")
        if self.root not in self.graph:
            raise exc.InvalidTargetGraph(f"root {self.root} is not a node")
        if not nx.is_arborescence(self.graph):
            raise exc.InvalidTargetGraph("target graph is not a rooted tree")
        roots = [n for n, deg in self.graph.in_degree() if deg == 0]
        if roots != [self.root]:
            raise exc.InvalidTargetGraph(
                f"target graph root is {roots}, not {self.root}"
            )
        for node in self.graph.nodes:
            if self.graph.out_degree(node) > max_children:
                raise exc.InvalidTargetGraph(
                    f"node {node} has more than {max_children} children"
                )
        return self

    def node_type(self, node: NodeId) -> RobotType:
        try:
            return str(self.graph.nodes[node]["type"])
        except KeyError:
            raise exc.UnknownTargetNode(f"node {node} is not in the target graph")

    def children(self, node: t.Optional[NodeId] = None) -> t.List[NodeId]:
        node = self.root if node is None else node
        if node not in self.graph:
            raise exc.UnknownTargetNode(f"node {node} is not in the target graph")
        return sorted(self.graph.successors(node))

    def parent(self, node: NodeId) -> t.Optional[NodeId]:
        preds = list(self.graph.predecessors(node))
        return preds[0] if preds else None

    def link(self, parent: NodeId, child: NodeId) -> t.Tuple[Vec3, UnitQuat]:
        try:
            data = self.graph.edges[parent, child]
        except KeyError:
            raise exc.UnknownTargetNode(f"no target link {parent} -> {child}")
        return data["d"], data["q"]

    def subgraph(self, node: NodeId) -> "TargetGraph":
        return subdivide_target(self, node)

    def target_cardinality(self, node: t.Optional[NodeId] = None) -> t.Dict[str, int]:
        """Per-type node count of the subtree rooted at ``node``."""
        node = self.root if node is None else node
        if node not in self.graph:
            raise exc.UnknownTargetNode(f"node {node} is not in the target graph")
        card: t.Dict[str, int] = {}
        for n in {node} | nx.descendants(self.graph, node):
            robot_type = self.node_type(n)
            card[robot_type] = card.get(robot_type, 0) + 1
        return dict(sorted(card.items()))

    def height(self, node: t.Optional[NodeId] = None) -> int:
        """Number of nodes on the longest path from ``node`` to a leaf."""
        node = self.root if node is None else node
        kids = self.children(node)
        return 1 + max((self.height(k) for k in kids), default=0)

    def depth_of(self, node: NodeId) -> int:
        if node not in self.graph:
            raise exc.UnknownTargetNode(f"node {node} is not in the target graph")
        return int(nx.shortest_path_length(self.graph, self.root, node))

    def pose_of(self, node: NodeId) -> t.Tuple[Vec3, UnitQuat]:
        """Target pose of ``node`` in the root's frame."""
        if node not in self.graph:
            raise exc.UnknownTargetNode(f"node {node} is not in the target graph")
        path = nx.shortest_path(self.graph, self.root, node)
        d, q = vec3(), quat_identity()
        for parent, child in zip(path, path[1:]):
            d_link, q_link = self.link(parent, child)
            d, q = compose_pose(d, q, d_link, q_link)
        return d, q

    def position_of(self, node: NodeId) -> Vec3:
        return self.pose_of(node)[0]

    def as_digraph(self) -> "nx.DiGraph[NodeId]":
        return self.graph.copy()

    def isomorphic_to(self, tree: "nx.DiGraph[t.Any]") -> bool:
        """Whether ``tree`` (nodes with a ``type`` attribute) has this topology.

        >>> g = TargetGraph.lookup(n_aerial=1, n_ground=1)
        >>> h = nx.DiGraph()
        >>> h.add_node(10, type=AERIAL); h.add_node(11, type=GROUND)
        >>> h.add_edge(10, 11)
        >>> g.isomorphic_to(h)
        True
        """
        if tree.number_of_nodes() != len(self):
            return False
        return bool(
            nx.is_isomorphic(
                self.graph,
                tree,
                node_match=lambda a, b: a.get("type") == b.get("type"),
            )
        )

    def to_dict(self, node: t.Optional[NodeId] = None) -> t.Dict[str, t.Any]:
        """Nested tree form used in scenario files.

        >>> TargetGraph.lookup(n_aerial=1, n_ground=1).to_dict()
        {'id': 0, 'type': 'aerial',
         'children': [{'id': 1, 'type': 'ground', 'd': [1.0, 0.8, -1.5]}]}
        """
        node = self.root if node is None else node
        out: t.Dict[str, t.Any] = {"id": node, "type": self.node_type(node)}
        parent = self.parent(node)
        if parent is not None and node != self.root:
            d, q = self.link(parent, node)
            out["d"] = [round(float(x), 9) for x in d]
            if not np.allclose(q, quat_identity()):
                out["q"] = [round(float(x), 9) for x in q]
        kids = self.children(node)
        if kids:
            out["children"] = [self.to_dict(k) for k in kids]
        return out

    @classmethod
    def from_dict(cls, data: t.Mapping[str, t.Any]) -> "TargetGraph":
        """Build from the nested tree form, or from ``{lookup: {...}}``.

        Node ids are taken from ``id`` keys when present, otherwise assigned in
        depth-first order.

        >>> g = TargetGraph.from_dict(
        ...     {"type": "aerial", "children": [{"type": "ground", "d": [1, 0, -1.5]}]}
        ... )
        >>> g.children(0), g.node_type(1)
        ([1], 'ground')
        >>> len(TargetGraph.from_dict({"lookup": {"aerial": 2, "ground": 4}}))
        6
        """
        if not isinstance(data, t.Mapping):
            raise exc.InvalidTargetGraph("target graph must be a mapping")
        if "lookup" in data:
            params = dict(data["lookup"])
            return cls.lookup(
                n_aerial=int(params.pop("aerial", 1)),
                n_ground=int(params.pop("ground", 0)),
                **params,
            )
        graph = cls()
        counter = [0]

        def visit(node_data: t.Mapping[str, t.Any], parent: t.Optional[NodeId]) -> None:
            if not isinstance(node_data, t.Mapping) or "type" not in node_data:
                raise exc.InvalidTargetGraph("every target node needs a 'type'")
            node = int(node_data.get("id", counter[0]))
            counter[0] = max(counter[0], node) + 1
            if node in graph.graph:
                raise exc.InvalidTargetGraph(f"duplicate target node id {node}")
            graph.add_node(node, str(node_data["type"]))
            if parent is None:
                graph._root = node
            else:
                d = node_data.get("d")
                if d is None or len(d) != 3:
                    raise exc.InvalidTargetGraph(f"node {node} needs a 3-vector 'd'")
                q = node_data.get("q")
                graph.add_link(
                    parent,
                    node,
                    vec3(*map(float, d)),
                    None if q is None else quat(*map(float, q)),
                )
            for child in node_data.get("children", []) or []:
                visit(child, node)

        visit(data, None)
        return graph.validate()

    @classmethod
    def lookup(
        cls,
        n_aerial: int,
        n_ground: int,
        spacing: float = 2.0,
        lateral: float = 1.0,
        ground_spread: float = 0.8,
        altitude: float = 1.5,
        layout: str = "wing",
    ) -> "TargetGraph":
        """Lookup-table formation for a mixed swarm.

        The aerial robots form a chain: with ``layout="wing"`` it branches both
        ways from the root along ±y, with ``layout="line"`` it trails behind the
        root along -x. Ground robots are spread under the aerial robots round
        robin, nearest the neighbouring aerial robot first so that adjacent
        aerial robots share a ground robot in view.

        Raises
        ------
        :exc:`exc.InvalidTargetGraph`
            more ground robots than the aerial robots can hold
        """
        if n_aerial < 1:
            raise exc.InvalidTargetGraph("a lookup formation needs an aerial root")
        if layout not in ("wing", "line"):
            raise exc.InvalidTargetGraph(f"unknown lookup layout {layout!r}")
        g = cls()
        g.add_node(0, AERIAL)
        aerial: t.List[t.Tuple[NodeId, float]] = [(0, 1.0)]
        #: last node of each chain arm, with the arm's direction
        arms: t.Dict[float, NodeId] = {}
        for k in range(1, n_aerial):
            if layout == "wing":
                sign = 1.0 if k % 2 == 1 else -1.0
                d = vec3(0.0, sign * spacing, 0.0)
            else:
                sign = 1.0
                d = vec3(-spacing, 0.0, 0.0)
            parent = arms.get(sign, 0)
            g.add_node(k, AERIAL)
            g.add_link(parent, k, d)
            arms[sign] = k
            aerial.append((k, -sign))

        slots: t.List[t.List[Vec3]] = []
        for node, toward in aerial:
            if layout == "wing":
                near, far = toward * ground_spread, -toward * ground_spread
                offsets = [
                    (lateral, near),
                    (-lateral, near),
                    (lateral, 0.0),
                    (-lateral, 0.0),
                    (lateral, far),
                    (-lateral, far),
                ]
                slots.append([vec3(x, y, -altitude) for x, y in offsets])
            else:
                offsets_x = [f * spacing for f in (-0.6, 0.3, -0.3, 0.6)]
                slots.append([vec3(x, 0.0, -altitude) for x in offsets_x])
        capacity = sum(
            min(len(s), MAX_CHILDREN - len(g.children(node)))
            for s, (node, _) in zip(slots, aerial)
        )
        if n_ground > capacity:
            raise exc.InvalidTargetGraph(
                f"{n_aerial} aerial robots hold at most {capacity} ground robots"
            )
        next_id = n_aerial
        level = 0
        while next_id < n_aerial + n_ground:
            for (node, _), s in zip(aerial, slots):
                if next_id >= n_aerial + n_ground:
                    break
                if level >= len(s) or len(g.children(node)) >= MAX_CHILDREN:
                    continue
                g.add_node(next_id, GROUND)
                g.add_link(node, next_id, s[level])
                next_id += 1
            level += 1
        return g.validate()

    @classmethod
    def line(
        cls, types: t.Sequence[RobotType], spacing: float = 1.0, altitude: float = 1.5
    ) -> "TargetGraph":
        """A single chain trailing the root along -x."""
        g = cls()
        for node, robot_type in enumerate(types):
            g.add_node(node, robot_type)
            if node:
                dz = 0.0
                if types[node - 1] != robot_type:
                    dz = -altitude if robot_type == GROUND else altitude
                g.add_link(node - 1, node, vec3(-spacing, 0.0, dz))
        return g.validate()


def subdivide_target(target: TargetGraph, node: NodeId) -> TargetGraph:
    """The subtree rooted at ``node``, with the node ids of ``target``.

    Raises
    ------
    :exc:`exc.UnknownTargetNode`

    Examples
    --------
    >>> chain = TargetGraph.line([AERIAL] * 5)
    >>> sub = subdivide_target(chain, 1)
    >>> len(sub), sub.root
    (4, 1)
    >>> subdivide_target(chain, 9)
    Traceback (most recent call last):
    ...
    sonsim.exc.UnknownTargetNode: node 9 is not in the target graph
    """
    if node not in target.graph:
        raise exc.UnknownTargetNode(f"node {node} is not in the target graph")
    keep = {node} | nx.descendants(target.graph, node)
    return TargetGraph(target.graph.subgraph(keep).copy(), root=node)


class SwarmTopology:

    """Snapshot of every robot's parent record.

    The parent pointer a robot holds is authoritative. A child entry held by a
    former parent whose child already points elsewhere is a release still in
    flight; :meth:`pending_releases` lists those.

    Examples
    --------
    >>> topo = SwarmTopology({1: None, 2: 1, 3: 2, 4: None}, {1: [2], 2: [3]})
    >>> topo.is_forest(), topo.roots(), sorted(topo.sons_of(1))
    (True, [1, 4], [1, 2, 3])
    >>> topo.depth_of(3)
    2
    """

    def __init__(
        self,
        parents: t.Mapping[RobotId, t.Optional[RobotId]],
        children: t.Optional[t.Mapping[RobotId, t.Iterable[RobotId]]] = None,
        types: t.Optional[t.Mapping[RobotId, RobotType]] = None,
    ) -> None:
        self.parents = dict(parents)
        self.children = {k: sorted(v) for k, v in (children or {}).items()}
        self.types = dict(types or {})
        self.graph: "nx.DiGraph[RobotId]" = nx.DiGraph()
        for robot in self.parents:
            self.graph.add_node(robot, type=self.types.get(robot))
        for robot, parent in self.parents.items():
            if parent is not None and parent in self.parents:
                self.graph.add_edge(parent, robot)

    def is_forest(self) -> bool:
        return bool(nx.is_branching(self.graph))

    def violations(self) -> int:
        """Robots on a parent-pointer cycle."""
        return sum(len(c) for c in nx.simple_cycles(self.graph))

    def pending_releases(self) -> t.List[t.Tuple[RobotId, RobotId]]:
        return [
            (parent, child)
            for parent, kids in self.children.items()
            for child in kids
            if self.parents.get(child) != parent
        ]

    def roots(self) -> t.List[RobotId]:
        return sorted(n for n in self.graph if self.parents.get(n) is None)

    def sons_of(self, root: RobotId) -> t.Set[RobotId]:
        return {root} | set(nx.descendants(self.graph, root))

    def depth_of(self, robot: RobotId) -> int:
        depth = 0
        seen = {robot}
        parent = self.parents.get(robot)
        while parent is not None:
            if parent in seen:
                raise exc.SonsException(f"robot {robot} is on a parent cycle")
            seen.add(parent)
            depth += 1
            parent = self.parents.get(parent)
        return depth

    def components(self) -> t.List[t.Set[RobotId]]:
        """SoNSs by size, largest first; ties broken by smallest root id."""
        sons = [self.sons_of(root) for root in self.roots()]
        return sorted(sons, key=lambda s: (-len(s), min(s)))

    def tree_of(self, root: RobotId) -> "nx.DiGraph[RobotId]":
        return self.graph.subgraph(self.sons_of(root)).copy()

    def brain_of(self, robot: RobotId) -> RobotId:
        node = robot
        seen = {node}
        while self.parents.get(node) is not None:
            node = t.cast(RobotId, self.parents[node])
            if node in seen:
                break
            seen.add(node)
        return node
