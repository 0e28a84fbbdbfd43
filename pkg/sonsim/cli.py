"""Command line.

sonsim.cli
~~~~~~~~~~

``sonsim run`` runs one scenario, ``sonsim sweep`` a manifest of seeded runs,
and ``sonsim iss`` prints the stability report of a formation.

"""
import logging
import pathlib
import sys
import typing as t

import click
import numpy as np
import yaml

from . import exc
from .__about__ import __version__
from .config import SCENARIO_DIR, IssSettings
from .core import TargetGraph
from .iss import (
    FormationGraph,
    PairGains,
    cascade_gains,
    check_dominance,
    error_bound,
    export_csv,
    formation_from_target,
    p_iss,
    simulate_pair,
    sons_formation_check,
)
from .missions import Scenario, load_manifest, run_batch

logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

#: Exit code of a run that ended without meeting its success predicate
EXIT_UNSUCCESSFUL = 1

#: Exit code of an invalid scenario, manifest or formation file
EXIT_CONFIG = 2


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _config_error(e: exc.ConfigError) -> "t.NoReturn":
    click.echo(f"error: {e}", err=True)
    sys.exit(EXIT_CONFIG)


def _resolve_manifest(name: str) -> pathlib.Path:
    path = pathlib.Path(name)
    if path.is_file():
        return path
    bundled = SCENARIO_DIR / "manifests" / f"{path.stem}.yaml"
    if bundled.is_file():
        return bundled
    raise exc.ConfigError(f"manifest '{name}' not found", source=name)


@click.group()
@click.version_option(__version__, prog_name="sonsim")
@click.option(
    "--log-level",
    type=click.Choice(LOG_LEVELS, case_sensitive=False),
    default="WARNING",
    show_default=True,
)
def cli(log_level: str) -> None:
    """Self-organizing nervous system swarm simulator."""
    _setup_logging(log_level)


@cli.command()
@click.argument("scenario")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option(
    "--out",
    type=click.Path(file_okay=False),
    default="out",
    show_default=True,
    help="Directory for the run log.",
)
@click.option(
    "--set",
    "overrides",
    multiple=True,
    metavar="KEY=VALUE",
    help="Override a scenario value, e.g. protocol.k1=0.4.",
)
@click.option(
    "--format",
    "fmt",
    type=click.Choice(("csv", "json")),
    default="csv",
    show_default=True,
)
@click.option("--budget", type=float, default=None, help="Simulated seconds.")
@click.option("--dry-run", is_flag=True, help="Validate the scenario only.")
def run(
    scenario: str,
    seed: t.Optional[int],
    out: str,
    overrides: t.Tuple[str, ...],
    fmt: str,
    budget: t.Optional[float],
    dry_run: bool,
) -> None:
    """Run SCENARIO, a file or a bundled scenario name.

    Exits 0 when the mission's success predicate was met.
    """
    try:
        loaded = Scenario.load(scenario, overrides, seed=seed, budget_s=budget)
    except exc.ConfigError as e:
        _config_error(e)
    if dry_run:
        click.echo(
            f"{loaded.name}: {len(loaded.robots)} robots, "
            f"{len(loaded.obstacles)} obstacles, seed {loaded.settings.seed}, "
            f"budget {loaded.budget_steps} steps"
        )
        return
    log = loaded.run()
    path = log.emit(out, fmt)
    summary = log.summary()
    click.echo(
        f"{loaded.name}: {log.outcome} after {log.steps} steps, "
        f"E={summary['final_E']:.3f} m, log {path}"
    )
    if not log.success:
        sys.exit(EXIT_UNSUCCESSFUL)


@cli.command()
@click.argument("manifest")
@click.option("--jobs", type=int, default=1, show_default=True, help="Workers.")
@click.option(
    "--out",
    type=click.Path(file_okay=False),
    default="out",
    show_default=True,
    help="Directory for logs and summaries.",
)
@click.option(
    "--format",
    "fmt",
    type=click.Choice(("csv", "json")),
    default="csv",
    show_default=True,
)
def sweep(manifest: str, jobs: int, out: str, fmt: str) -> None:
    """Run every seeded job of MANIFEST and write summary.csv.

    Runs with a summary file in the output directory are not repeated.
    """
    try:
        name, run_jobs = load_manifest(_resolve_manifest(manifest))
    except exc.ConfigError as e:
        _config_error(e)
    batch = run_batch(name, run_jobs, workers=jobs, out_dir=out, fmt=fmt)
    for row in batch.aggregate():
        click.echo(
            f"{row['label'] or name}: {row['successes']}/{row['runs']} succeeded"
        )
    click.echo(f"{len(batch)} runs, summary in {pathlib.Path(out) / 'summary.csv'}")


def _target(path: str) -> TargetGraph:
    try:
        data = yaml.safe_load(pathlib.Path(path).read_text(encoding="utf-8"))
        return TargetGraph.from_dict(data.get("target", data))
    except (OSError, yaml.YAMLError, AttributeError, exc.InvalidTargetGraph) as e:
        raise exc.ConfigError(str(e), source=path) from e


@cli.command()
@click.argument("formation", required=False)
@click.option("--theta", type=float, default=0.5, show_default=True)
@click.option("--gain", type=float, default=5.0, show_default=True)
@click.option(
    "--pair",
    nargs=4,
    type=float,
    default=None,
    metavar="DX DY UX UY",
    help="Simulate one pair with target displacement (DX, DY) and leader "
    "velocity (UX, UY).",
)
@click.option(
    "--leader-start",
    nargs=2,
    type=float,
    default=(5.0, 10.0),
    show_default=True,
    help="Leader start of --pair; the follower starts at the origin.",
)
@click.option("--feedforward", is_flag=True, help="Feed the leader velocity forward.")
@click.option("--horizon", type=float, default=10.0, show_default=True)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
@click.option(
    "--dominance",
    type=int,
    default=0,
    metavar="N",
    help="Check the error bound against N random pair simulations.",
)
def iss(
    formation: t.Optional[str],
    theta: float,
    gain: float,
    pair: t.Optional[t.Tuple[float, float, float, float]],
    leader_start: t.Tuple[float, float],
    feedforward: bool,
    horizon: float,
    csv_path: t.Optional[str],
    dominance: int,
) -> None:
    """Stability report of FORMATION, a target-graph file.

    Without a file the three-robot cascade is used.
    """
    if not 0.0 < theta < 1.0:
        raise click.BadParameter("must be in (0, 1)", param_hint="--theta")
    gains = PairGains.from_gain(gain, theta)
    target = None
    try:
        if formation is None:
            graph = FormationGraph.cascade(3, gains)
        else:
            target = _target(formation)
            graph = formation_from_target(target, gains)
        graph.validate()
    except exc.SonsException as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(f"pair: beta={gains.beta:.6g} gamma={gains.gamma:.6g}")
    for node, total in sorted(cascade_gains(graph).items()):
        click.echo(f"node {node}: beta={total.beta:.6g} gamma={total.gamma:.6g}")
    click.echo(f"P_ISS = {p_iss(graph):.12g}")
    if target is not None:
        report = sons_formation_check(target, IssSettings(gain=gain, theta=theta))
        if report.flagged:
            click.echo(f"over the envelope: {report.flagged}")

    if pair is not None:
        dx, dy, ux, uy = pair
        series = simulate_pair(
            leader_start,
            (0.0, 0.0),
            (dx, dy),
            gains,
            u=(ux, uy),
            feedforward=feedforward,
            horizon=horizon,
        )
        u_sup = 0.0 if feedforward else float(np.hypot(ux, uy))
        bound = error_bound(series.time, float(series.error_norm[0]), u_sup, gains)
        last = float(np.asarray(bound).ravel()[-1])
        click.echo(f"pair: final |e|={series.error_norm[-1]:.6g}, bound={last:.6g}")
        if csv_path:
            export_csv(csv_path, series, bound)
            click.echo(f"series written to {csv_path}")

    if dominance:
        failed = check_dominance(dominance, gains, np.random.default_rng(0))
        click.echo(f"dominance: {dominance - len(failed)}/{dominance} trials hold")
        if failed:
            sys.exit(EXIT_UNSUCCESSFUL)


def main() -> None:
    cli()


__all__ = ["cli", "main"]
