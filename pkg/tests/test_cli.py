"""Tests for the sonsim command line."""
import pathlib
import typing as t

import pytest

from _pytest.monkeypatch import MonkeyPatch
from click.testing import CliRunner

from sonsim import __version__, cli as cli_module
from sonsim.cli import EXIT_CONFIG, EXIT_UNSUCCESSFUL, cli
from sonsim.missions import Batch, RunJob


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


def test_version(runner: CliRunner) -> None:
    result = runner.invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_dry_run(runner: CliRunner) -> None:
    """``run --dry-run`` validates and describes the scenario."""
    result = runner.invoke(
        cli,
        [
            "run",
            "establishment",
            "--dry-run",
            "--seed",
            "3",
            "--set",
            "swarm.n=4",
            "--budget",
            "10",
        ],
    )
    assert result.exit_code == 0, result.output
    assert result.output.strip() == (
        "establishment: 4 robots, 0 obstacles, seed 3, budget 50 steps"
    )


@pytest.mark.parametrize(
    "args",
    [
        ["run", "no-such-mission"],
        ["run", "establishment", "--set", "protocol.k1=-1"],
        ["run", "establishment", "--set", "novalue"],
    ],
)
def test_bad_scenario_exits_with_config_code(
    runner: CliRunner, args: t.List[str]
) -> None:
    """Configuration errors exit with code 2."""
    result = runner.invoke(cli, args)
    assert result.exit_code == EXIT_CONFIG
    assert "error:" in result.output


def test_unfinished_run_writes_log(runner: CliRunner, tmp_path: pathlib.Path) -> None:
    """A run out of budget exits 1 and still writes its log."""
    out = tmp_path / "logs"
    result = runner.invoke(
        cli,
        ["run", "establishment", "--set", "swarm.n=3", "--budget", "1"]
        + ["--out", str(out), "--seed", "4"],
    )
    assert result.exit_code == EXIT_UNSUCCESSFUL, result.output
    assert "budget after 5 steps" in result.output
    assert (out / "establishment-4.csv").is_file()


def test_iss_default_cascade(runner: CliRunner) -> None:
    """Without a file, ``iss`` reports the three-robot cascade."""
    result = runner.invoke(cli, ["iss"])
    assert result.exit_code == 0, result.output
    lines = result.output.splitlines()
    assert lines[0] == "pair: beta=1 gamma=2"
    assert lines[1] == "node 1: beta=1 gamma=2"
    assert lines[2] == "node 2: beta=15 gamma=38"
    assert lines[3] == "P_ISS = 0.025641025641"


def test_iss_pair_series(runner: CliRunner, tmp_path: pathlib.Path) -> None:
    path = tmp_path / "pair.csv"
    result = runner.invoke(
        cli,
        ["iss", "--pair", "3", "4", "5", "5", "--horizon", "5", "--csv", str(path)],
    )
    assert result.exit_code == 0, result.output
    assert "final |e|=1.41421" in result.output
    assert path.read_text().startswith("t,error_norm,bound")


def test_iss_formation_file(runner: CliRunner, tmp_path: pathlib.Path) -> None:
    """Nodes over the envelope are listed for a formation file."""
    path = tmp_path / "target.yaml"
    path.write_text("target:\n  lookup: {aerial: 2, ground: 4}\n")
    result = runner.invoke(cli, ["iss", str(path)])
    assert result.exit_code == 0, result.output
    assert "over the envelope: [3, 5]" in result.output


def test_iss_errors(runner: CliRunner, tmp_path: pathlib.Path) -> None:
    assert runner.invoke(cli, ["iss", "--theta", "1.5"]).exit_code == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("type: boat\n")
    result = runner.invoke(cli, ["iss", str(bad)])
    assert result.exit_code == EXIT_CONFIG
    assert "error:" in result.output


def test_iss_dominance(runner: CliRunner) -> None:
    result = runner.invoke(cli, ["iss", "--dominance", "3"])
    assert result.exit_code == 0
    assert "dominance: 3/3 trials hold" in result.output


def test_sweep_uses_bundled_manifest(
    runner: CliRunner, tmp_path: pathlib.Path, monkeypatch: MonkeyPatch
) -> None:
    """Manifest names resolve to bundled manifests."""
    seen: t.Dict[str, t.Any] = {}

    def fake_run_batch(
        name: str,
        jobs: t.Sequence[RunJob],
        workers: int = 1,
        out_dir: t.Optional[str] = None,
        fmt: str = "csv",
    ) -> Batch:
        seen.update(name=name, jobs=list(jobs), workers=workers, out_dir=out_dir)
        return Batch(name, [{"label": "", "success": True}] * len(jobs))

    monkeypatch.setattr(cli_module, "run_batch", fake_run_batch)
    result = runner.invoke(
        cli, ["sweep", "establishment", "--jobs", "2", "--out", str(tmp_path)]
    )
    assert result.exit_code == 0, result.output
    assert seen["name"] == "establishment-sweep"
    assert len(seen["jobs"]) == 10
    assert seen["workers"] == 2
    assert "establishment-sweep: 10/10 succeeded" in result.output


def test_sweep_missing_manifest(runner: CliRunner) -> None:
    result = runner.invoke(cli, ["sweep", "nowhere"])
    assert result.exit_code == EXIT_CONFIG
    assert "manifest 'nowhere' not found" in result.output
