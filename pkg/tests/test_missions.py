"""Tests for sonsim.missions."""
import pathlib
import textwrap
import typing as t

import numpy as np
import pytest

from _pytest.monkeypatch import MonkeyPatch

from sonsim import exc, missions
from sonsim.config import Settings
from sonsim.core import AERIAL, SensedFeature, TargetGraph
from sonsim.geometry import norm, quat_identity, vec3
from sonsim.metrics import ErrorSample, RunLog, write_summaries
from sonsim.missions import (
    BATCH_SUMMARY,
    Batch,
    BinaryDecisionScript,
    EstablishmentScript,
    Proposal,
    RunJob,
    Scenario,
    SplitMergeScript,
    SweepScript,
    arena_overrides,
    barrier,
    experiment_fault,
    experiment_scalability,
    fault_jobs,
    fault_recovery,
    fault_schedule,
    generate_swarm,
    load_manifest,
    mission_establishment,
    mission_obstacle_field,
    mission_split_merge,
    obstacle_field,
    passage_width,
    run_batch,
    scalability_jobs,
    scalability_time_limit,
    script_from_dict,
)
from sonsim.protocol import RobotState
from sonsim.test import seeded_rng, temp_world
from sonsim.world import Arena

BUNDLED = [
    "establishment",
    "obstacle_field",
    "obstacle_field_small_dense",
    "obstacle_field_large_sparse",
    "sweep",
    "binary_decision",
    "split_merge_simple",
    "split_merge_search_rescue",
    "split_merge_push_obstruction",
]


def write(path: pathlib.Path, text: str) -> pathlib.Path:
    path.write_text(textwrap.dedent(text).lstrip(), encoding="utf-8")
    return path


def wall(
    feature_id: int, d: t.Tuple[float, float], hx: float, hy: float
) -> SensedFeature:
    return SensedFeature(
        feature_id,
        "wall",
        vec3(d[0], d[1], -1.5),
        quat_identity(),
        shape="box",
        half_x=hx,
        half_y=hy,
    )


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_load(name: str) -> None:
    """Every bundled scenario loads and validates."""
    scenario = Scenario.load(name)
    assert scenario.name == name
    assert scenario.robots
    assert scenario.settings.tick == 0.2
    assert scenario.arena is not None
    assert all(scenario.arena.contains(r.position) for r in scenario.robots)
    ids = [r.robot_id for r in scenario.robots]
    assert len(ids) == len(set(ids))


def test_sweep_scenario_has_alternative_targets() -> None:
    scenario = missions.mission_sweep()
    assert sorted(scenario.alt_targets) == ["line", "narrow"]
    assert scenario.target is not None
    n_aerial = sum(1 for r in scenario.robots if r.robot_type == AERIAL)
    assert scenario.target.target_cardinality()[AERIAL] == n_aerial
    assert isinstance(scenario.script, SweepScript)
    assert scenario.script.min_swaps == 2


def test_binary_decision_openings() -> None:
    scenario = missions.mission_binary_decision(seed=4)
    widths = sorted(o.width for o in scenario.obstacles if o.kind == "opening")
    assert widths == [1.0, 2.0]


def test_same_seed_same_layout() -> None:
    """Generated layouts depend only on the seed."""
    a = mission_establishment(seed=5)
    b = mission_establishment(seed=5)
    c = mission_establishment(seed=6)
    assert [r.position.tolist() for r in a.robots] == [
        r.position.tolist() for r in b.robots
    ]
    assert [r.position.tolist() for r in a.robots] != [
        r.position.tolist() for r in c.robots
    ]


def test_load_shorthands() -> None:
    scenario = Scenario.load("establishment", ["swarm.n=3"], seed=9, budget_s=10.0)
    assert scenario.settings.seed == 9
    assert scenario.budget_steps == 50
    assert len(scenario.robots) == 3


def test_mission_variants() -> None:
    assert mission_obstacle_field("large-sparse").name == "obstacle_field_large_sparse"
    assert mission_split_merge("search-rescue").script.variant == "search_rescue"
    for call in (
        lambda: mission_establishment("ring"),
        lambda: mission_obstacle_field("medium"),
        lambda: mission_split_merge("dance"),
    ):
        with pytest.raises(exc.ConfigError, match="unknown"):
            call()


def test_scenario_errors_point_at_lines(tmp_path: pathlib.Path) -> None:
    """Scenario errors name the file line of the bad field."""
    path = write(
        tmp_path / "bad.yaml",
        """
        name: bad
        swarm:
          n: 4
          layout: spiral
        """,
    )
    with pytest.raises(exc.ConfigError) as e:
        Scenario.load(path)
    assert e.value.field == "swarm.layout"
    assert e.value.line == 4
    assert str(e.value).count("field") == 1


def test_scenario_unknown_key(tmp_path: pathlib.Path) -> None:
    path = write(tmp_path / "bad.yaml", "robots: [{id: 1}]\ncolour: red\n")
    with pytest.raises(exc.ConfigError, match="unknown key") as e:
        Scenario.load(path)
    assert (e.value.field, e.value.line) == ("colour", 2)


@pytest.mark.parametrize(
    "data, message",
    [
        ({}, "no robots"),
        ({"robots": [{"id": 1, "type": "boat"}]}, "unknown robot type"),
        ({"robots": [{"type": "aerial"}]}, "id"),
        ({"swarm": {"n": 4, "wings": 2}}, "unknown swarm keys"),
        ({"swarm": {"n": 4, "n_aerial": 0}}, "n_aerial"),
        ({"swarm": {"n": 2}, "target": {"lookup": {"ground": 9}}}, ""),
        ({"swarm": {"n": 2}, "arena": {"shape": "circle"}}, "arena shape"),
        ({"swarm": {"n": 2}, "faults": [{"kind": "fire"}]}, "fault kind"),
    ],
)
def test_scenario_validation(data: dict, message: str) -> None:
    with pytest.raises(exc.ConfigError, match=message):
        Scenario.from_dict(data)


def test_explicit_robots_keep_ids() -> None:
    """Robots listed in the file keep their ids."""
    scenario = Scenario.from_dict(
        {
            "robots": [{"id": 7, "type": "aerial", "p": [1, 1], "yaw_deg": 90}],
            "swarm": {"n": 2, "n_aerial": 1},
        }
    )
    assert [r.robot_id for r in scenario.robots] == [7, 8, 9]
    assert scenario.robots[0].yaw == pytest.approx(np.pi / 2)
    assert isinstance(scenario.script, EstablishmentScript)


def test_generate_swarm_layouts() -> None:
    arena = Arena(length=10.0, width=10.0)
    clustered = generate_swarm({"n": 32}, arena, seeded_rng(1))
    assert sum(1 for r in clustered if r.robot_type == AERIAL) == 8
    assert all(norm(r.position) <= 1.5 * 2.0 + 1e-9 for r in clustered)
    assert [r.robot_id for r in clustered] == list(range(1, 33))

    grid = generate_swarm(
        {"n": 4, "layout": "grid", "spread": 2.0}, arena, seeded_rng(1)
    )
    assert sorted(tuple(r.position[:2]) for r in grid) == [
        (-1.0, -1.0),
        (-1.0, 1.0),
        (1.0, -1.0),
        (1.0, 1.0),
    ]

    scattered = generate_swarm(
        {"n": 20, "layout": "scattered", "margin": 1.0}, arena, seeded_rng(2)
    )
    assert all(arena.contains(r.position, 1.0) for r in scattered)


def test_generated_robots_keep_apart() -> None:
    """Generated robots never overlap."""
    robots = generate_swarm({"n": 12, "n_aerial": 4}, Arena(), seeded_rng(3))
    for robot_type, gap in missions.MIN_SEPARATION.items():
        same = [r.position for r in robots if r.robot_type == robot_type]
        for i, a in enumerate(same):
            for b in same[i + 1 :]:
                assert norm(a - b) >= gap


def test_no_room_for_swarm() -> None:
    with pytest.raises(exc.ConfigError, match="no room"):
        generate_swarm(
            {"n": 20, "n_aerial": 20, "spread": 0.1}, Arena(), seeded_rng(0)
        )


def test_obstacle_field() -> None:
    field = obstacle_field(
        {"count": 6, "radius": [0.1, 0.2], "region": [0, 0, 4, 4], "min_gap": 0.3},
        seeded_rng(0),
        first_id=10,
    )
    assert [o.obstacle_id for o in field] == list(range(10, 16))
    for i, a in enumerate(field):
        assert 0.0 <= a.p[0] <= 4.0 and 0.0 <= a.p[1] <= 4.0
        assert 0.1 <= a.radius <= 0.2
        for b in field[i + 1 :]:
            assert norm(a.p - b.p) >= a.radius + b.radius + 0.3
    fixed = obstacle_field({"count": 2, "radius": 0.3}, seeded_rng(0), 1)
    assert {o.radius for o in fixed} == {0.3}
    with pytest.raises(exc.ConfigError, match="unknown obstacle_field keys"):
        obstacle_field({"density": 2}, seeded_rng(0), 1)


def test_barrier_shuffle_depends_on_seed() -> None:
    """The wider opening moves between sides with the seed."""
    spec = {"x": 1.0, "widths": [2.0, 1.0], "shuffle": True}
    sides = set()
    for seed in range(8):
        parts = barrier(spec, Arena(), seeded_rng(seed), 1)
        wide = max((o for o in parts if o.kind == "opening"), key=lambda o: o.width)
        sides.add(float(np.sign(wide.p[1])))
    assert sides == {-1.0, 1.0}


def test_barrier_errors() -> None:
    with pytest.raises(exc.ConfigError, match="overlap"):
        barrier({"widths": [4.0, 4.0]}, Arena(), None, 1)
    with pytest.raises(exc.ConfigError, match="barrier needs"):
        barrier({"widths": [1.0]}, Arena(), None, 1)


def test_script_from_dict() -> None:
    assert isinstance(script_from_dict(None), EstablishmentScript)
    split = script_from_dict({"kind": "split_merge", "variant": "push_obstruction"})
    assert isinstance(split, SplitMergeScript)
    with pytest.raises(exc.ConfigError, match="script"):
        script_from_dict({"kind": "sweep", "turbo": True})
    with pytest.raises(exc.ConfigError, match="variant"):
        script_from_dict({"kind": "split_merge", "variant": "dance"})


def test_passage_width_from_walls() -> None:
    """The passage width is the gap between sensed walls beside the heading."""
    state = RobotState.create(0, AERIAL, TargetGraph.lookup(1, 2), seed=0)
    assert passage_width(state, vec3(1, 0, 0)) == float("inf")
    state.features = {
        1: wall(1, (0.0, 1.2), 2.0, 0.05),
        2: wall(2, (0.0, -0.8), 2.0, 0.05),
        3: wall(3, (2.0, 0.0), 0.05, 2.0),
    }
    assert passage_width(state, vec3(1, 0, 0)) == pytest.approx(1.9)
    # heading along the corridor walls, they are ahead and behind
    assert passage_width(state, vec3(0, 1, 0)) == float("inf")


def test_sweep_hysteresis() -> None:
    """Formation swaps wait for the width to hold several steps."""
    target = TargetGraph.lookup(1, 2)
    script = SweepScript()
    script.mode = "wide"
    script.targets = {"wide": target, "narrow": target, "line": target}
    assert script.wanted(2.0) == "narrow"
    assert script.wanted(1.0) == "line"
    assert script.wanted(2.8) == "wide"
    script.mode = "narrow"
    assert script.wanted(2.8) == "narrow"
    assert script.wanted(3.5) == "wide"
    script.targets = {"wide": target}
    script.mode = "wide"
    assert script.wanted(1.0) == "wide"


def test_binary_decision_tie_breaks() -> None:
    script = BinaryDecisionScript()
    script.proposals = {}
    assert script.decide() is None
    script.proposals = {
        5: Proposal(step=12, proposer=3, width=1.0),
        6: Proposal(step=14, proposer=2, width=2.0),
        7: Proposal(step=13, proposer=4, width=2.0),
    }
    assert script.decide() == 7
    script.proposals[8] = Proposal(step=13, proposer=1, width=2.0)
    assert script.decide() == 8


def test_establishment_script_sets_wander() -> None:
    scenario = mission_establishment(n=3, overrides=["script.wander=false"])
    with temp_world(scenario) as world:
        assert all(not s.wander for s in world.states.values())
        assert not world.success()


def test_run_job_stem() -> None:
    assert RunJob("establishment", 3).stem == "establishment-3"
    assert RunJob("/x/sweep.yaml", 1, label="n=25").stem == "sweep-n25-1"


def test_scalability_limits() -> None:
    """Time limits grow with the swarm above 125 robots."""
    assert scalability_time_limit(125) == 500.0
    assert scalability_time_limit(126) == 508.0
    assert arena_overrides(300)[0] == "arena.length=34.6"
    jobs = scalability_jobs([25, 50], [0, 1])
    assert [j.label for j in jobs] == ["n=25", "n=25", "n=50", "n=50"]
    assert jobs[2].overrides[:2] == ("swarm.n=50", "arena.length=14.1")
    assert jobs[2].budget_s == 500.0


def test_fault_schedules() -> None:
    assert fault_schedule("kill_brain", 0.0, 10.0) == (
        "faults=[{kind: kill, time_s: 10.0, robot: brain}]"
    )
    assert fault_schedule("comm_blackout", 1.0, 40.0) == (
        "faults=[{kind: comm_blackout, time_s: 40.0, duration_s: 1.0}]"
    )
    with pytest.raises(exc.ConfigError):
        fault_schedule("meteor", 1.0, 1.0)
    jobs = fault_jobs("vision_blackout", 0.5, [1, 2], overrides=["swarm.n=30"])
    assert [j.seed for j in jobs] == [1, 2]
    assert jobs[0].label == "vision_blackout=0.5"
    assert jobs[0].overrides[0] == "swarm.n=30"
    assert jobs[0].scenario == "sweep"


def test_fault_schedule_is_a_valid_override() -> None:
    """Fault schedules pass scenario validation as overrides."""
    scenario = Scenario.load(
        "establishment", ["swarm.n=3", fault_schedule("kill_random", 0.5, 2.0)]
    )
    (fault,) = scenario.faults
    assert (fault.kind, fault.step, fault.probability) == ("kill_random", 10, 0.5)


@pytest.mark.parametrize(
    "value, seeds",
    [
        (None, [0]),
        (3, [0, 1, 2]),
        ([4, 9], [4, 9]),
        ({"start": 2, "count": 2}, [2, 3]),
    ],
)
def test_seed_list(value: t.Any, seeds: t.List[int]) -> None:
    assert missions._seed_list(value, "m.yaml") == seeds


def test_bad_seed_list() -> None:
    with pytest.raises(exc.ConfigError, match="bad seeds"):
        missions._seed_list("many", "m.yaml")


def test_bundled_manifests() -> None:
    """Bundled manifests expand to their seeded jobs."""
    root = pathlib.Path(missions.__file__).parent / "scenarios" / "manifests"
    name, jobs = load_manifest(root / "establishment.yaml")
    assert name == "establishment-sweep"
    assert [j.seed for j in jobs] == list(range(1, 11))
    assert jobs[0].overrides == ("swarm.layout=scattered",)

    _, jobs = load_manifest(root / "scalability.yaml")
    assert len(jobs) == 40

    _, jobs = load_manifest(root / "fault.yaml")
    assert len(jobs) == 60
    assert {j.fault for j in jobs} == set(missions.FAULT_EXPERIMENTS)


def test_manifest_with_local_scenario(tmp_path: pathlib.Path) -> None:
    write(tmp_path / "mine.yaml", "robots: [{id: 1}]\n")
    manifest = write(
        tmp_path / "m.yaml",
        """
        scenario: mine.yaml
        seeds: [3]
        budget_s: 5
        """,
    )
    name, jobs = load_manifest(manifest)
    assert name == "m"
    assert jobs == [RunJob(str(tmp_path / "mine.yaml"), 3, (), 5.0)]


@pytest.mark.parametrize(
    "text, message",
    [
        ("seeds: 3\n", "needs a scenario"),
        ("scenario: [unclosed\n", "cannot read manifest"),
        ("scenario: nowhere\n", "not found"),
    ],
)
def test_bad_manifest(tmp_path: pathlib.Path, text: str, message: str) -> None:
    with pytest.raises(exc.ConfigError, match=message):
        load_manifest(write(tmp_path / "m.yaml", text))


def test_fault_recovery() -> None:
    """Recovery is measured against the error before the fault."""
    log = RunLog(Settings())
    log.samples = [ErrorSample(k, E=1.0 if k < 10 else 3.0) for k in range(20)]
    assert fault_recovery(log, 10, 5) == (1.0, 3.0)
    assert fault_recovery(log, 0, 5) == (None, 3.0)


def test_batch_aggregate_reads_strings() -> None:
    batch = Batch(
        "b",
        [
            {"label": "n=5", "success": "True", "final_E": "0.5", "ops_max": 4},
            {"label": "n=5", "success": False, "final_E": "", "ops_max": 6},
            {"label": "n=9", "success": True, "final_E": 0.25},
        ],
    )
    small, large = batch.aggregate()
    assert (small["label"], small["runs"], small["successes"]) == ("n=5", 2, 1)
    assert small["final_E"] == 0.5
    assert small["ops_max"] == 5.0
    assert small["recovered_E"] is None
    assert (large["runs"], large["successes"]) == (1, 1)


def test_run_batch_resumes(tmp_path: pathlib.Path, monkeypatch: MonkeyPatch) -> None:
    """Runs with a summary file are not repeated."""
    jobs = [RunJob("establishment", seed, label="x") for seed in range(3)]
    write_summaries(
        tmp_path / f"{jobs[1].stem}.summary.csv",
        [{"scenario": "establishment", "seed": 1, "label": "x", "success": True}],
        BATCH_SUMMARY,
    )
    ran = []

    def fake_run_job(
        job: RunJob, out_dir: t.Optional[str] = None, fmt: str = "csv"
    ) -> t.Dict[str, t.Any]:
        ran.append(job.seed)
        return {"scenario": job.scenario, "seed": job.seed, "label": job.label}

    monkeypatch.setattr(missions, "run_job", fake_run_job)
    batch = run_batch("resume", jobs, out_dir=tmp_path)

    assert ran == [0, 2]
    assert [str(r["seed"]) for r in batch.rows] == ["0", "1", "2"]
    assert (tmp_path / "summary.csv").is_file()
    (aggregate,) = batch.aggregate()
    assert (aggregate["runs"], aggregate["successes"]) == (3, 1)
    assert (tmp_path / "aggregate.csv").is_file()


def test_experiments_build_their_batches(
    tmp_path: pathlib.Path, monkeypatch: MonkeyPatch
) -> None:
    """The experiment helpers name their batch and hand over the jobs."""
    seen: t.List[t.Tuple[str, t.List[RunJob], int]] = []

    def fake_run_batch(
        name: str,
        jobs: t.Sequence[RunJob],
        workers: int = 1,
        out_dir: t.Optional[str] = None,
        fmt: str = "csv",
    ) -> Batch:
        seen.append((name, list(jobs), workers))
        return Batch(name, [])

    monkeypatch.setattr(missions, "run_batch", fake_run_batch)
    batch = experiment_scalability([5, 25], seeds=[0, 1, 2], workers=3)
    assert batch.name == "scalability"
    name, jobs, workers = seen[-1]
    assert (name, len(jobs), workers) == ("scalability", 6, 3)
    assert jobs[3].overrides[0] == "swarm.n=25"

    experiment_fault("kill_random", 0.25, seeds=range(4), out_dir=tmp_path)
    name, jobs, workers = seen[-1]
    assert name == "fault-kill_random"
    assert [j.seed for j in jobs] == [0, 1, 2, 3]
    assert {j.label for j in jobs} == {"kill_random=0.25"}
    assert jobs[0].overrides[-1].startswith("faults=[{kind: kill_random")


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_run(name: str) -> None:
    """Every bundled mission ticks through its opening steps."""
    world = Scenario.load(name, seed=0).build()
    log = world.run(100)
    assert log.outcome in ("budget", "success", "failure")
    assert world.step <= 100
    assert world.topology().violations() == 0


def test_scattered_swarm_near_walls_runs() -> None:
    world = mission_establishment("scattered", n=8, seed=0).build()
    for _ in range(150):
        world.tick()
    assert world.topology().violations() == 0


@pytest.mark.slow
@pytest.mark.parametrize("n", [8, 12])
def test_establishment_converges(n: int) -> None:
    """At least nine in ten seeded swarms form one SoNS within 500 s."""
    outcomes = [
        Scenario.load("establishment", [f"swarm.n={n}", *arena_overrides(n)], seed=s)
        .run()
        .outcome
        for s in range(10)
    ]
    assert outcomes.count("success") >= 9, outcomes


@pytest.mark.slow
def test_topology_stays_a_forest() -> None:
    """No parent cycle forms in any step of scattered establishment runs."""
    for seed in range(10):
        world = mission_establishment("scattered", n=8, seed=seed).build()
        for _ in range(300):
            world.tick()
            assert world.topology().violations() == 0, (seed, world.step)


@pytest.mark.slow
def test_binary_decision_picks_the_wider_opening() -> None:
    for seed in range(10):
        scenario = missions.mission_binary_decision(seed=seed)
        world = scenario.build()
        log = world.run()
        assert isinstance(scenario.script, BinaryDecisionScript)
        assert log.outcome == "success", seed
        assert scenario.script.chosen == scenario.script.widest_opening(world)


@pytest.mark.slow
def test_communication_load_plateaus() -> None:
    """Bytes per robot and step grow with the swarm, then level off."""
    load: t.Dict[int, float] = {}
    for n in (8, 25, 50, 75, 100):
        scenario = Scenario.load(
            "establishment", [f"swarm.n={n}", *arena_overrides(n)], seed=0
        )
        load[n] = scenario.run(max_steps=500).summary()["bytes_per_robot_step"]
    assert load[8] < load[25] < load[50]
    assert abs(load[100] - load[75]) < 0.1 * load[75]


@pytest.mark.slow
def test_small_swarm_establishes() -> None:
    """A small swarm forms one SoNS within the budget."""
    log = mission_establishment(n=4, seed=2).run()
    assert log.outcome == "success"
    assert log.converged_step is not None
    assert log.summary()["n_sons"] == 1


@pytest.mark.slow
def test_run_job_writes_log_and_summary(out_dir: pathlib.Path) -> None:
    job = RunJob("establishment", 1, ("swarm.n=3",), budget_s=20.0)
    summary = missions.run_job(job, str(out_dir))
    assert summary["seed"] == 1
    assert (out_dir / "establishment-1.csv").is_file()
    assert (out_dir / "establishment-1.summary.csv").is_file()
