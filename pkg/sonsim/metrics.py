"""Run metrics.

sonsim.metrics
~~~~~~~~~~~~~~

Measured on the largest SoNS of each snapshot:

- the actuation error ``E``: per robot, the difference between its distance to
  the brain and its target distance to the brain, averaged
- the lower bound ``B``: how much error a robot must still have given its
  distance to its target when the current formation was set and its top speed
- traffic in bytes and the per-robot operation count
- convergence: the topology matches the brain's target graph and ``E - B``
  stays below ``epsilon`` for ``window`` consecutive steps

:class:`RunLog` collects one row per step and writes CSV or JSON.

"""
import csv
import dataclasses
import json
import logging
import math
import pathlib
import typing as t

import numpy as np
from scipy import stats

from . import formats
from .config import Settings
from .core import RobotId
from .geometry import Vec3, norm, rotate_vector, yaw_quat

if t.TYPE_CHECKING:
    from .world import WorldSnapshot

logger = logging.getLogger(__name__)

StrPath = t.Union[str, pathlib.Path]


@dataclasses.dataclass(frozen=True)
class ErrorSample:

    """Errors of one step.

    Robots outside the largest SoNS, or inside it without a target node, are
    left out of ``per_robot`` and counted in ``n_unassigned``.
    """

    step: int
    per_robot: t.Mapping[RobotId, float] = dataclasses.field(default_factory=dict)
    E: float = 0.0
    E_ci: float = 0.0
    B: float = 0.0
    per_robot_B: t.Mapping[RobotId, float] = dataclasses.field(default_factory=dict)
    n_unassigned: int = 0
    brain: t.Optional[RobotId] = None
    isomorphic: bool = False


def confidence_halfwidth(values: t.Sequence[float], level: float = 0.95) -> float:
    """Half-width of the Student-t confidence interval of the mean.

    >>> confidence_halfwidth([1.0])
    0.0
    >>> round(confidence_halfwidth([1.0, 2.0, 3.0]), 4)
    2.4841
    """
    n = len(values)
    if n < 2:
        return 0.0
    spread = float(np.std(values, ddof=1)) / math.sqrt(n)
    return float(stats.t.ppf((1.0 + level) / 2.0, n - 1)) * spread


def target_positions(
    snapshot: "WorldSnapshot", brain: RobotId
) -> t.Dict[RobotId, Vec3]:
    """World-frame target of every assigned robot of ``brain``'s SoNS.

    Targets are anchored at the brain's current pose.
    """
    view = snapshot.robots[brain]
    target = view.target
    if target is None:
        return {}
    to_world = yaw_quat(view.yaw)
    out = {}
    for robot in sorted(snapshot.topology.sons_of(brain)):
        node = snapshot.robots[robot].node
        if node is None or node not in target:
            continue
        out[robot] = view.position + rotate_vector(to_world, target.position_of(node))
    return out


def compute_E(
    snapshot: "WorldSnapshot",
    brain: t.Optional[RobotId] = None,
    ci_level: float = 0.95,
) -> ErrorSample:
    """Actuation error of the SoNS led by ``brain`` (default: the largest).

    Examples
    --------
    >>> from sonsim.test import snapshot_of
    >>> from sonsim.core import TargetGraph
    >>> g = TargetGraph.line(["aerial", "aerial"], spacing=1.0)
    >>> snap = snapshot_of(g, {0: (0.0, 0.0), 1: (-2.0, 0.0)})
    >>> sample = compute_E(snap)
    >>> sample.per_robot, sample.E
    ({0: 0.0, 1: 1.0}, 0.5)
    """
    if brain is None:
        brain = snapshot.largest_brain()
    if brain is None:
        return ErrorSample(snapshot.step)
    targets = target_positions(snapshot, brain)
    p_brain = snapshot.robots[brain].position
    per_robot = {
        robot: abs(
            norm(snapshot.robots[robot].position - p_brain) - norm(f - p_brain)
        )
        for robot, f in targets.items()
    }
    values = list(per_robot.values())
    return ErrorSample(
        step=snapshot.step,
        per_robot=per_robot,
        E=float(np.mean(values)) if values else 0.0,
        E_ci=confidence_halfwidth(values, ci_level),
        n_unassigned=snapshot.n_robots - len(per_robot),
        brain=brain,
    )


class BoundTracker:

    """Lower bound on the error, reset whenever the formation changes.

    A new epoch starts when the brain of the largest SoNS changes or swaps its
    target graph. Each robot's bound starts at its distance to its target at
    its first step in the epoch and shrinks at the robot's top speed.
    """

    def __init__(self, kappa: t.Mapping[str, float], tick: float) -> None:
        self.kappa = dict(kappa)
        self.tick = tick
        self.key: t.Any = None
        self.initial: t.Dict[RobotId, t.Tuple[int, float]] = {}

    def update(
        self, snapshot: "WorldSnapshot", brain: t.Optional[RobotId]
    ) -> t.Tuple[float, t.Dict[RobotId, float]]:
        if brain is None:
            self.key = None
            return 0.0, {}
        key = (brain, snapshot.robots[brain].target_version)
        if key != self.key:
            self.key = key
            self.initial = {}
        per_robot = {}
        for robot, f in target_positions(snapshot, brain).items():
            view = snapshot.robots[robot]
            if robot not in self.initial:
                self.initial[robot] = (snapshot.step, norm(view.position - f))
            start, distance = self.initial[robot]
            elapsed = (snapshot.step - start) * self.tick
            per_robot[robot] = distance - self.kappa[view.robot_type] * elapsed
        if not per_robot:
            return 0.0, per_robot
        positive = [b for b in per_robot.values() if b > 0.0]
        return sum(positive) / len(per_robot), per_robot


def compute_B(
    history: t.Sequence["WorldSnapshot"], kappa: t.Mapping[str, float], tick: float
) -> t.List[float]:
    """Lower bound for every snapshot of a run."""
    tracker = BoundTracker(kappa, tick)
    return [tracker.update(s, s.largest_brain())[0] for s in history]


def detect_convergence(
    samples: t.Sequence[ErrorSample], epsilon: float = 0.1, window: int = 25
) -> t.Optional[int]:
    """Step at which the first ``window``-long run of converged samples ends.

    >>> ok = [ErrorSample(k, isomorphic=True) for k in range(30)]
    >>> detect_convergence(ok, window=25)
    25
    >>> detect_convergence(ok[:10], window=25) is None
    True
    """
    streak = 0
    for sample in samples:
        if sample.isomorphic and sample.E - sample.B < epsilon:
            streak += 1
            if streak == window:
                start = sample.step - window + 1
                return start + window
        else:
            streak = 0
    return None


class RunLog:

    """Append-only per-step record of one run."""

    def __init__(self, settings: Settings, name: str = "", seed: int = 0) -> None:
        self.settings = settings
        self.name = name
        self.seed = seed
        self.samples: t.List[ErrorSample] = []
        self.rows: t.List[t.Dict[str, t.Any]] = []
        self.converged_step: t.Optional[int] = None
        self.outcome = "running"
        self.steps = 0
        self.stranded = 0
        self.survivors = 0
        self.n_robots = 0
        p = settings.protocol
        self.tracker = BoundTracker(
            {"aerial": p.v_max_aerial, "ground": p.v_max_ground}, settings.tick
        )
        self._streak = 0
        self._bytes = (0, 0)

    def __len__(self) -> int:
        return len(self.rows)

    def record(self, snapshot: "WorldSnapshot") -> ErrorSample:
        m = self.settings.metrics
        brain = snapshot.largest_brain()
        sample = compute_E(snapshot, brain, m.ci_level)
        bound, per_robot_b = self.tracker.update(snapshot, brain)
        isomorphic = False
        if brain is not None:
            target = snapshot.robots[brain].target
            tree = snapshot.topology.tree_of(brain)
            isomorphic = target is not None and target.isomorphic_to(tree)
        sample = dataclasses.replace(
            sample, B=bound, per_robot_B=per_robot_b, isomorphic=isomorphic
        )
        self.samples.append(sample)

        if isomorphic and sample.E - sample.B < m.epsilon:
            self._streak += 1
            if self._streak == m.window and self.converged_step is None:
                self.converged_step = snapshot.step + 1
                logger.info("%s converged at step %d", self.name, snapshot.step)
        else:
            self._streak = 0

        components = snapshot.topology.components()
        self.n_robots = max(self.n_robots, snapshot.n_robots + snapshot.n_dead)
        self.survivors = snapshot.n_robots
        self.stranded = snapshot.n_robots - (len(components[0]) if components else 0)
        bytes_in = snapshot.bytes_in - self._bytes[0]
        bytes_out = snapshot.bytes_out - self._bytes[1]
        self._bytes = (snapshot.bytes_in, snapshot.bytes_out)
        self.steps = snapshot.step
        self.rows.append(
            {
                "step": snapshot.step,
                "sim_time_s": round(snapshot.time, 6),
                "E_mean": sample.E,
                "E_ci": sample.E_ci,
                "B": sample.B,
                "bytes_in": bytes_in,
                "bytes_out": bytes_out,
                "ops_max": max((v.ops for v in snapshot.robots.values()), default=0),
                "n_sons": len(components),
                "converged": self.converged_step is not None,
                "n_unassigned": sample.n_unassigned,
                "dropped_msgs": snapshot.dropped_msgs,
                "forest_violations": snapshot.topology.violations(),
            }
        )
        return sample

    def finish(self, outcome: str, steps: int) -> None:
        self.outcome = outcome
        self.steps = steps

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    def summary(self) -> t.Dict[str, t.Any]:
        """Final record of the run, keyed by the summary columns."""
        total_bytes = sum(r["bytes_in"] + r["bytes_out"] for r in self.rows)
        robot_steps = sum(
            s.n_unassigned + len(s.per_robot) for s in self.samples
        )
        last = self.samples[-1] if self.samples else ErrorSample(0)
        return {
            "scenario": self.name,
            "seed": self.seed,
            "n_robots": self.n_robots,
            "steps": self.steps,
            "success": self.success,
            "converged_step": self.converged_step,
            "final_E": last.E,
            "final_B": last.B,
            "bytes_per_robot_step": total_bytes / robot_steps if robot_steps else 0.0,
            "ops_max": max((r["ops_max"] for r in self.rows), default=0),
            "n_sons": self.rows[-1]["n_sons"] if self.rows else 0,
            "stranded": self.stranded,
            "survivors": self.survivors,
        }

    def header(self) -> t.Dict[str, t.Any]:
        return {
            "schema": formats.LOG_SCHEMA_VERSION,
            "scenario": self.name,
            "seed": self.seed,
        }

    def to_csv(self, path: StrPath) -> pathlib.Path:
        """Write one row per step, after a commented header line."""
        path = pathlib.Path(path)
        h = self.header()
        with path.open("w", newline="") as f:
            f.write(
                f"# sonsim run log v{h['schema']} scenario={h['scenario']}"
                f" seed={h['seed']}\n"
            )
            writer = csv.DictWriter(
                f, fieldnames=formats.RUN_LOG_COLUMNS, delimiter=formats.CSV_SEPARATOR
            )
            writer.writeheader()
            writer.writerows(self.rows)
        return path

    def to_json(self, path: StrPath) -> pathlib.Path:
        path = pathlib.Path(path)
        detail = [
            dict(row, E_i={str(k): v for k, v in sample.per_robot.items()})
            for row, sample in zip(self.rows, self.samples)
        ]
        document = dict(self.header(), rows=detail, summary=self.summary())
        path.write_text(json.dumps(document, indent=1))
        return path

    def emit(self, out_dir: StrPath, fmt: str = "csv") -> pathlib.Path:
        """Write the log as ``<scenario>-<seed>.<fmt>`` under ``out_dir``."""
        out = pathlib.Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{self.name or 'run'}-{self.seed}"
        if fmt == "json":
            return self.to_json(out / f"{stem}.json")
        return self.to_csv(out / f"{stem}.csv")


def write_summaries(
    path: StrPath,
    summaries: t.Iterable[t.Mapping[str, t.Any]],
    columns: t.Optional[t.Sequence[str]] = None,
) -> pathlib.Path:
    """CSV with one :meth:`RunLog.summary` per row.

    ``columns`` defaults to the summary columns; extra keys are ignored.
    """
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(
            f,
            fieldnames=list(columns or formats.RUN_SUMMARY_COLUMNS),
            delimiter=formats.CSV_SEPARATOR,
            extrasaction="ignore",
        )
        writer.writeheader()
        for summary in summaries:
            writer.writerow(summary)
    return path


def read_summaries(path: StrPath) -> t.List[t.Dict[str, str]]:
    with pathlib.Path(path).open(newline="") as f:
        return list(csv.DictReader(f, delimiter=formats.CSV_SEPARATOR))
