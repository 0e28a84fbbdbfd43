"""Leader-follower stability bounds.

sonsim.iss
~~~~~~~~~~

Every link of a SoNS is a leader-follower pair under the reactive law
``u_j = K e`` with ``e = (p_i - p_j) - d*``. For a leader moving at ``u_i``
the tracking error obeys ``ė = u_i - K e``; with feed-forward of the leader's
velocity it obeys ``ė = -K e``.

Each pair is input-to-state stable with transient gain ``β̂ = (c2/c1)^(1/a)``
and asymptotic gain ``γ̂ = c2/(c1 θ)``, where ``c1``, ``c2`` are the smallest
and largest diagonal gains and ``a = 2``. Gains compose along a formation tree:
the deeper a follower, the larger its totals. ``P_ISS = 1/(1 + γ(1))`` scores
a formation in ``[0, 1]``.

"""
import csv
import dataclasses
import logging
import math
import pathlib
import typing as t

import networkx as nx
import numpy as np
import numpy.typing as npt

from . import exc, formats
from .config import IssSettings
from .core import NodeId, TargetGraph
from .vehicles import rk4_step

logger = logging.getLogger(__name__)

#: Exponent of the quadratic Lyapunov function
LYAPUNOV_ORDER = 2.0


@dataclasses.dataclass(frozen=True)
class PairGains:

    """Diagonal controller gains of one follower, with the ISS constants.

    Examples
    --------
    >>> g = PairGains.from_gain(5.0, theta=0.5)
    >>> g.c1, g.c2, g.c3
    (5.0, 5.0, 5.0)
    >>> g.beta, g.gamma
    (1.0, 2.0)
    """

    k: t.Tuple[float, ...] = (5.0, 5.0)
    theta: float = 0.5

    def __post_init__(self) -> None:
        if not self.k or min(self.k) <= 0.0:
            raise ValueError("controller gains must be positive")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")

    @classmethod
    def from_gain(cls, k: float, theta: float = 0.5, dim: int = 2) -> "PairGains":
        return cls(tuple([float(k)] * dim), theta)

    @property
    def K(self) -> npt.NDArray[np.float64]:
        return np.diag(self.k)

    @property
    def c1(self) -> float:
        return float(min(self.k))

    @property
    def c2(self) -> float:
        return float(max(self.k))

    @property
    def a(self) -> float:
        return LYAPUNOV_ORDER

    @property
    def c3(self) -> float:
        return 2.0 * self.c1 * (1.0 - self.theta)

    @property
    def beta(self) -> float:
        return float((self.c2 / self.c1) ** (1.0 / self.a))

    @property
    def gamma(self) -> float:
        return self.c2 / (self.c1 * self.theta)

    @property
    def decay(self) -> float:
        """Exponential rate of the transient term of the bound."""
        return self.c3 / (self.c2 * self.a)


class PairSeries(t.NamedTuple):
    time: npt.NDArray[np.float64]
    error_norm: npt.NDArray[np.float64]


def simulate_pair(
    p_leader0: npt.ArrayLike,
    p_follower0: npt.ArrayLike,
    d_star: npt.ArrayLike,
    gains: PairGains,
    u: npt.ArrayLike = (0.0, 0.0),
    feedforward: bool = False,
    horizon: float = 10.0,
    dt: float = 0.001,
) -> PairSeries:
    """Tracking-error norm of a pair with a constant leader velocity ``u``.

    Examples
    --------
    >>> g = PairGains.from_gain(5.0, 0.5)
    >>> s = simulate_pair((5, 10), (0, 0), (3, 4), g, u=(5, 5), horizon=5.0)
    >>> round(float(s.error_norm[0]), 4), round(float(s.error_norm[-1]), 4)
    (6.3246, 1.4142)
    """
    e = (
        np.asarray(p_leader0, dtype=np.float64)
        - np.asarray(p_follower0, dtype=np.float64)
        - np.asarray(d_star, dtype=np.float64)
    )
    v = np.asarray(u, dtype=np.float64)
    K = gains.K
    drive = np.zeros_like(v) if feedforward else v

    def f(x: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        return t.cast(npt.NDArray[np.float64], drive - K @ x)

    n = int(round(horizon / dt))
    times = np.arange(n + 1) * dt
    norms = np.empty(n + 1)
    norms[0] = np.linalg.norm(e)
    for i in range(1, n + 1):
        e = rk4_step(f, e, dt)
        norms[i] = np.linalg.norm(e)
    return PairSeries(times, norms)


def error_bound(
    t_s: t.Union[float, npt.NDArray[np.float64]],
    e0_norm: float,
    u_sup: float,
    gains: PairGains,
) -> t.Union[float, npt.NDArray[np.float64]]:
    """Upper bound on the pair's error norm at time ``t_s``.

    >>> g = PairGains((4.0, 1.0), 0.5)
    >>> error_bound(0.0, 3.0, 0.0, g)
    6.0
    """
    transient = gains.beta * e0_norm * np.exp(-gains.decay * np.asarray(t_s))
    bound = transient + gains.gamma * u_sup
    if np.ndim(bound) == 0:
        return float(bound)
    return t.cast(npt.NDArray[np.float64], bound)


def ultimate_bound(u_sup: float, gains: PairGains) -> float:
    """Error norm beyond which the Lyapunov function strictly decreases."""
    return u_sup / (2.0 * gains.c1 * gains.theta)


def check_dominance(
    trials: int,
    gains: PairGains,
    rng: np.random.Generator,
    horizon: float = 2.0,
    dt: float = 0.01,
) -> t.List[int]:
    """Trials in which the simulated error norm exceeds :func:`error_bound`.

    Each trial draws start positions, a target displacement and a constant
    leader velocity at random.

    >>> check_dominance(5, PairGains.from_gain(5.0, 0.5), np.random.default_rng(0))
    []
    """
    failed = []
    for k in range(trials):
        p_leader, p_follower = rng.uniform(-10.0, 10.0, (2, len(gains.k)))
        d_star = rng.uniform(-5.0, 5.0, len(gains.k))
        u = rng.uniform(-5.0, 5.0, len(gains.k))
        series = simulate_pair(
            p_leader, p_follower, d_star, gains, u=u, horizon=horizon, dt=dt
        )
        bound = error_bound(
            series.time, float(series.error_norm[0]), float(np.linalg.norm(u)), gains
        )
        if np.any(series.error_norm > np.asarray(bound) + 1e-9):
            failed.append(k)
    if failed:
        logger.warning("bound dominance failed in %d of %d trials", len(failed), trials)
    return failed


class FormationGraph:

    """Leader-to-follower edges, each carrying the follower's :class:`PairGains`.

    Examples
    --------
    >>> f = FormationGraph.cascade(3, PairGains.from_gain(5.0, 0.5))
    >>> f.root, f.edges()
    (0, [(0, 1), (1, 2)])
    """

    def __init__(self, graph: t.Optional["nx.DiGraph[NodeId]"] = None) -> None:
        self.graph: "nx.DiGraph[NodeId]" = nx.DiGraph() if graph is None else graph

    def add_pair(self, leader: NodeId, follower: NodeId, gains: PairGains) -> None:
        self.graph.add_edge(leader, follower, gains=gains)

    def __len__(self) -> int:
        return self.graph.number_of_nodes()

    def edges(self) -> t.List[t.Tuple[NodeId, NodeId]]:
        return sorted(self.graph.edges())

    def gains_of(self, follower: NodeId) -> PairGains:
        (leader,) = self.graph.predecessors(follower)
        return t.cast(PairGains, self.graph.edges[leader, follower]["gains"])

    @property
    def root(self) -> NodeId:
        self.validate()
        (root,) = [n for n, deg in self.graph.in_degree() if deg == 0]
        return root

    def validate(self) -> "FormationGraph":
        """Raise :exc:`exc.CyclicFormation` unless the graph is one tree."""
        if len(self) and not nx.is_arborescence(self.graph):
            raise exc.CyclicFormation("an ISS formation must be a single tree")
        return self

    @classmethod
    def cascade(cls, n: int, gains: PairGains) -> "FormationGraph":
        f = cls()
        f.graph.add_node(0)
        for k in range(1, n):
            f.add_pair(k - 1, k, gains)
        return f

    @classmethod
    def parallel(cls, n: int, gains: PairGains) -> "FormationGraph":
        f = cls()
        f.graph.add_node(0)
        for k in range(1, n):
            f.add_pair(0, k, gains)
        return f


def formation_from_target(target: TargetGraph, gains: PairGains) -> FormationGraph:
    """One pair per link of a target graph, all with the same gains."""
    f = FormationGraph()
    f.graph.add_node(target.root)
    for leader, follower in target.graph.edges():
        f.add_pair(leader, follower, gains)
    return f


class GainTotals(t.NamedTuple):
    """Composed transient and asymptotic gains from the root to one node."""

    beta: float
    gamma: float


def compose_cascade(upstream: GainTotals, link: PairGains) -> GainTotals:
    """Totals of a follower reached through a leader whose totals are known.

    Evaluated with a unit input bound and unit initial error at ``t = 0``,
    inner functions first.

    >>> g = PairGains.from_gain(5.0, 0.5)
    >>> compose_cascade(GainTotals(g.beta, g.gamma), g)
    GainTotals(beta=15.0, gamma=38.0)
    """
    b, gm = link.beta, link.gamma
    beta = 2.0 * b * b + 4.0 * b * gm * upstream.beta + 2.0 * gm * upstream.beta
    beta += upstream.beta
    gamma = (
        2.0 * gm * upstream.gamma
        + 2.0 * gm
        + 4.0 * b * gm * upstream.gamma
        + 4.0 * b * gm
        + upstream.gamma
    )
    return GainTotals(beta, gamma)


def cascade_gains(formation: FormationGraph) -> t.Dict[NodeId, GainTotals]:
    """Composed gains of every follower, in topological order from the root.

    Raises
    ------
    :exc:`exc.CyclicFormation`
    """
    formation.validate()
    totals: t.Dict[NodeId, GainTotals] = {}
    if len(formation) < 2:
        return totals
    root = formation.root
    for node in nx.topological_sort(formation.graph):
        if node == root:
            continue
        (leader,) = formation.graph.predecessors(node)
        link = formation.gains_of(node)
        if leader == root:
            totals[node] = GainTotals(link.beta, link.gamma)
        else:
            totals[node] = compose_cascade(totals[leader], link)
    logger.debug("composed ISS gains of %d followers", len(totals))
    return totals


def formation_sum(
    formation: FormationGraph, node_a: NodeId, node_b: NodeId
) -> GainTotals:
    """Gains of the composite error of two followers of one formation."""
    totals = cascade_gains(formation)
    a, b = totals[node_a], totals[node_b]
    return GainTotals(a.beta + b.beta, a.gamma + b.gamma)


def p_iss(formation: FormationGraph) -> float:
    """Formation ISS measure, ``1/(1 + γ)`` of the worst follower.

    Examples
    --------
    >>> theta = 0.3
    >>> f = FormationGraph.cascade(3, PairGains.from_gain(5.0, theta))
    >>> abs(p_iss(f) - theta**2 / (theta**2 + 7 * theta + 6)) < 1e-12
    True
    """
    totals = cascade_gains(formation)
    if not totals:
        return 1.0
    return 1.0 / (1.0 + max(g.gamma for g in totals.values()))


@dataclasses.dataclass
class FormationReport:

    """Per-depth worst gains of a formation and the followers over the envelope."""

    depth_gamma: t.Dict[int, float] = dataclasses.field(default_factory=dict)
    flagged: t.List[NodeId] = dataclasses.field(default_factory=list)
    p_iss: float = 1.0
    u_sup: float = 0.0
    envelope: float = 0.0

    def __bool__(self) -> bool:
        return bool(self.depth_gamma)

    @property
    def safe(self) -> bool:
        return not self.flagged


def sons_formation_check(
    target: TargetGraph,
    settings: t.Optional[IssSettings] = None,
    u_sup: float = 2.0,
) -> FormationReport:
    """ISS gains of a target graph and the links whose asymptotic error bound
    at leader speed ``u_sup`` exceeds the safety envelope.

    >>> sons_formation_check(TargetGraph.single("aerial"))
    FormationReport(depth_gamma={}, flagged=[], p_iss=1.0, u_sup=2.0, envelope=5.0)
    """
    s = settings or IssSettings()
    formation = formation_from_target(target, PairGains.from_gain(s.gain, s.theta))
    totals = cascade_gains(formation)
    report = FormationReport(u_sup=u_sup, envelope=s.envelope)
    for node, gains in sorted(totals.items()):
        depth = target.depth_of(node)
        report.depth_gamma[depth] = max(report.depth_gamma.get(depth, 0.0), gains.gamma)
        if gains.gamma * u_sup > s.envelope:
            report.flagged.append(node)
    report.p_iss = p_iss(formation)
    if report.flagged:
        logger.warning(
            "%d links exceed the %.1f m envelope at %.1f m/s",
            len(report.flagged),
            s.envelope,
            u_sup,
        )
    return report


def export_csv(
    path: t.Union[str, pathlib.Path],
    series: PairSeries,
    bound: t.Optional[npt.ArrayLike] = None,
) -> pathlib.Path:
    """Write ``t, error_norm, bound`` rows for external plotting."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = (
        np.full_like(series.time, math.nan)
        if bound is None
        else np.broadcast_to(np.asarray(bound, dtype=np.float64), series.time.shape)
    )
    with path.open("w", newline="") as f:
        writer = csv.writer(f, delimiter=formats.CSV_SEPARATOR)
        writer.writerow(formats.ISS_SERIES_COLUMNS)
        for row in zip(series.time, series.error_norm, values):
            writer.writerow([repr(float(x)) for x in row])
    return path
