"""Node allocation.

sonsim.allocation
~~~~~~~~~~~~~~~~~

Matches candidate children (sources) to target child positions (targets). The
costs are built from displacements and downstream cardinalities, then solved as
a unit-capacity flow network ``source → robot → target → sink``: the flow
maximizes the number of matches and, among maximum matchings, minimizes
displacement cost first and cardinality cost second.

"""
import dataclasses
import logging
import typing as t

import networkx as nx
import numpy as np
import numpy.typing as npt

from .geometry import Vec3, unit

logger = logging.getLogger(__name__)

#: Displacement costs are rounded to this resolution (m) to form integer weights
COST_RESOLUTION = 1e-6

_SOURCE = "source"
_SINK = "sink"


@dataclasses.dataclass
class AllocationProblem:

    """Sources and targets, in one frame, with their cost matrices.

    ``compatible[i][j]`` is false where source ``i`` may not take target ``j``
    (robot type mismatch). ``bias`` is added to displacement costs, e.g. to keep
    current assignments stable.
    """

    source_d: t.List[Vec3]
    source_card: t.List[int]
    target_d: t.List[Vec3]
    target_card: t.List[int]
    w_d: t.Optional[npt.NDArray[np.float64]] = None
    w_card: t.Optional[npt.NDArray[np.float64]] = None
    compatible: t.Optional[npt.NDArray[np.bool_]] = None
    bias: t.Optional[npt.NDArray[np.float64]] = None

    def __post_init__(self) -> None:
        if len(self.source_d) != len(self.source_card):
            raise ValueError("source displacements and cardinalities differ in length")
        if len(self.target_d) != len(self.target_card):
            raise ValueError("target displacements and cardinalities differ in length")

    @property
    def shape(self) -> t.Tuple[int, int]:
        return len(self.source_d), len(self.target_d)


@dataclasses.dataclass
class Assignment:

    """Result of :func:`allocate`.

    ``pairs`` maps source index to target index and is injective.
    """

    pairs: t.Dict[int, int] = dataclasses.field(default_factory=dict)
    unmatched_sources: t.List[int] = dataclasses.field(default_factory=list)
    unmatched_targets: t.List[int] = dataclasses.field(default_factory=list)
    #: edges of the flow network, counted as work for the op-count metric
    ops: int = 0

    def __len__(self) -> int:
        return len(self.pairs)

    def target_of(self, source: int) -> t.Optional[int]:
        return self.pairs.get(source)

    def source_of(self, target: int) -> t.Optional[int]:
        for s, tg in self.pairs.items():
            if tg == target:
                return s
        return None


def build_costs(problem: AllocationProblem) -> AllocationProblem:
    """Fill in the displacement and cardinality cost matrices.

    ``w_d[i][j] = |S_i - T_j|`` (Euclidean) and ``w_card[i][j] = |S_i - T_j|``
    on counts.

    Examples
    --------
    >>> from sonsim.geometry import vec3
    >>> p = build_costs(AllocationProblem(
    ...     [vec3(1, 0, 0)], [1], [vec3(0, 0, 0), vec3(3, 0, 0)], [1, 2]
    ... ))
    >>> p.w_d.tolist(), p.w_card.tolist()
    ([[1.0, 2.0]], [[0.0, 1.0]])
    """
    n, m = problem.shape
    w_d = np.zeros((n, m))
    w_card = np.zeros((n, m))
    for i, (sd, sc) in enumerate(zip(problem.source_d, problem.source_card)):
        for j, (td, tc) in enumerate(zip(problem.target_d, problem.target_card)):
            w_d[i, j] = float(np.linalg.norm(np.asarray(sd) - np.asarray(td)))
            w_card[i, j] = abs(float(sc) - float(tc))
    return dataclasses.replace(problem, w_d=w_d, w_card=w_card)


def allocate(problem: AllocationProblem) -> Assignment:
    """Maximum matching of sources to targets at minimum lexicographic cost.

    Edges are inserted into the flow network sorted by ``(w_d, w_card, i, j)``
    and solved with :func:`networkx.max_flow_min_cost`. Displacement costs are
    made integral at ``COST_RESOLUTION`` and weighted above any possible sum of
    cardinality costs, so cardinality only breaks displacement ties.

    Examples
    --------
    >>> from sonsim.geometry import vec3
    >>> p = AllocationProblem(
    ...     [vec3(0, 0, 0), vec3(5, 0, 0)], [1, 1],
    ...     [vec3(5.1, 0, 0), vec3(0.1, 0, 0)], [1, 1],
    ... )
    >>> allocate(p).pairs
    {0: 1, 1: 0}
    >>> allocate(AllocationProblem([], [], [], [])).pairs
    {}
    """
    n, m = problem.shape
    if n == 0 or m == 0:
        return Assignment(
            unmatched_sources=list(range(n)), unmatched_targets=list(range(m))
        )
    if problem.w_d is None or problem.w_card is None:
        problem = build_costs(problem)
    assert problem.w_d is not None and problem.w_card is not None
    w_d = problem.w_d if problem.bias is None else problem.w_d + problem.bias
    w_card = problem.w_card
    compatible = (
        np.ones((n, m), dtype=bool)
        if problem.compatible is None
        else np.asarray(problem.compatible, dtype=bool)
    )

    card_scale = int(np.sum(np.max(w_card, axis=1))) + 1
    edges = sorted(
        (
            (float(w_d[i, j]), float(w_card[i, j]), i, j)
            for i in range(n)
            for j in range(m)
            if compatible[i, j]
        )
    )

    graph: "nx.DiGraph[t.Any]" = nx.DiGraph()
    graph.add_node(_SOURCE)
    for i in range(n):
        graph.add_edge(_SOURCE, ("s", i), capacity=1, weight=0)
    for j in range(m):
        graph.add_edge(("t", j), _SINK, capacity=1, weight=0)
    for wd, wc, i, j in edges:
        weight = int(round(max(wd, 0.0) / COST_RESOLUTION)) * card_scale + int(wc)
        graph.add_edge(("s", i), ("t", j), capacity=1, weight=weight)

    flow = nx.max_flow_min_cost(graph, _SOURCE, _SINK)
    pairs: t.Dict[int, int] = {}
    for i in range(n):
        for node, amount in flow[("s", i)].items():
            if amount > 0:
                pairs[i] = node[1]
    matched_targets = set(pairs.values())
    result = Assignment(
        pairs=dict(sorted(pairs.items())),
        unmatched_sources=[i for i in range(n) if i not in pairs],
        unmatched_targets=[j for j in range(m) if j not in matched_targets],
        ops=graph.number_of_edges(),
    )
    logger.debug("allocated %d of %d sources to %d targets", len(result), n, m)
    return result


def total_cost(problem: AllocationProblem, assignment: Assignment) -> float:
    """Summed displacement cost of the matched pairs."""
    if problem.w_d is None:
        problem = build_costs(problem)
    assert problem.w_d is not None
    return float(sum(problem.w_d[i, j] for i, j in assignment.pairs.items()))


def substitution_test(
    d_child: Vec3, d_star_child: Vec3, d_self: Vec3, d_star_self: Vec3
) -> bool:
    """Whether a child should substitute its parent at the parent's target.

    True iff ``d_child · unit(d*_child) < d_self · unit(d*_self)``, all in the
    shared parent frame. A zero-length target never triggers substitution.

    Examples
    --------
    >>> from sonsim.geometry import vec3
    >>> x = vec3(1, 0, 0)
    >>> substitution_test(vec3(0, 0, 0), x, vec3(2, 0, 0), x)
    True
    >>> substitution_test(vec3(1, 0, 0), x, vec3(1, 0, 0), x)
    False
    >>> substitution_test(vec3(0, 0, 0), vec3(), vec3(2, 0, 0), vec3())
    False
    """
    if not np.any(d_star_child) or not np.any(d_star_self):
        return False
    lhs = float(np.dot(d_child, unit(d_star_child)))
    rhs = float(np.dot(d_self, unit(d_star_self)))
    return lhs < rhs
