"""Tests for sonsim.iss."""
import math
import pathlib

import numpy as np
import pytest

from hypothesis import given, strategies as st

from sonsim import exc, formats
from sonsim.config import IssSettings
from sonsim.core import TargetGraph
from sonsim.iss import (
    FormationGraph,
    GainTotals,
    PairGains,
    cascade_gains,
    check_dominance,
    error_bound,
    export_csv,
    formation_from_target,
    formation_sum,
    p_iss,
    simulate_pair,
    sons_formation_check,
    ultimate_bound,
)
from sonsim.test import seeded_rng


def test_feedforward_error_decays_exponentially() -> None:
    """With feed-forward the error decays as exp(-kt)."""
    g = PairGains.from_gain(5.0)
    s = simulate_pair(
        (3, 4), (0, 0), (0, 0), g, u=(2, -1), feedforward=True, horizon=1
    )
    assert s.error_norm[0] == pytest.approx(5.0)
    assert s.error_norm[-1] == pytest.approx(5.0 * math.exp(-5.0), rel=1e-6)
    assert s.time[-1] == pytest.approx(1.0)


def test_moving_leader_leaves_steady_error() -> None:
    """A moving leader leaves a steady error of K⁻¹u."""
    g = PairGains((4.0, 2.0))
    s = simulate_pair((0, 0), (0, 0), (0, 0), g, u=(2, 2), horizon=10)
    # the error settles at K^-1 u
    assert s.error_norm[-1] == pytest.approx(math.hypot(0.5, 1.0), rel=1e-6)
    assert s.error_norm[-1] <= ultimate_bound(math.hypot(2, 2), g)


@pytest.mark.parametrize("k", [1.0, 5.0, 20.0])
def test_bound_dominates_simulation(k: float) -> None:
    """The ISS bound holds over random pair simulations."""
    assert check_dominance(20, PairGains.from_gain(k, 0.5), seeded_rng(int(k))) == []


def test_error_bound_over_time() -> None:
    g = PairGains.from_gain(5.0, 0.5)
    times = np.array([0.0, 1.0, 100.0])
    bound = error_bound(times, 2.0, 1.0, g)
    assert isinstance(bound, np.ndarray)
    assert bound[0] == pytest.approx(2.0 + 2.0)
    assert bound[1] < bound[0]
    assert bound[-1] == pytest.approx(g.gamma)


@pytest.mark.parametrize(
    "k, theta, message",
    [((), 0.5, "positive"), ((1.0, -1.0), 0.5, "positive"), ((1.0,), 1.0, "theta")],
)
def test_pair_gains_validation(k: tuple, theta: float, message: str) -> None:
    with pytest.raises(ValueError, match=message):
        PairGains(k, theta)


def test_anisotropic_constants() -> None:
    g = PairGains((4.0, 1.0), theta=0.25)
    assert (g.c1, g.c2) == (1.0, 4.0)
    assert g.beta == pytest.approx(2.0)
    assert g.gamma == pytest.approx(16.0)
    assert g.decay == pytest.approx(2.0 * 0.75 / 8.0)


def test_cascade_gains_grow_with_depth() -> None:
    """Gains accumulate down a cascade."""
    g = PairGains.from_gain(5.0, 0.5)
    totals = cascade_gains(FormationGraph.cascade(4, g))
    assert totals[1] == GainTotals(1.0, 2.0)
    assert totals[2] == GainTotals(15.0, 38.0)
    assert totals[3].gamma > totals[2].gamma


def test_parallel_followers_share_gains() -> None:
    g = PairGains.from_gain(5.0, 0.5)
    f = FormationGraph.parallel(4, g)
    assert set(cascade_gains(f).values()) == {GainTotals(1.0, 2.0)}
    assert p_iss(f) == pytest.approx(1.0 / 3.0)
    assert formation_sum(f, 1, 2) == GainTotals(2.0, 4.0)


@given(st.floats(0.01, 0.99))
def test_p_iss_of_single_pair(theta: float) -> None:
    """One pair scores θ/(1 + θ)."""
    f = FormationGraph.cascade(2, PairGains.from_gain(5.0, theta))
    assert p_iss(f) == pytest.approx(theta / (1.0 + theta))


def test_p_iss_of_lone_robot() -> None:
    assert p_iss(FormationGraph.cascade(1, PairGains())) == 1.0


def test_cyclic_formation() -> None:
    """Loops and forests are not formations."""
    g = PairGains()
    loop = FormationGraph()
    loop.add_pair(0, 1, g)
    loop.add_pair(1, 0, g)
    with pytest.raises(exc.CyclicFormation):
        cascade_gains(loop)

    forest = FormationGraph()
    forest.add_pair(0, 1, g)
    forest.add_pair(2, 3, g)
    with pytest.raises(exc.CyclicFormation):
        forest.root


def test_formation_from_target() -> None:
    f = formation_from_target(TargetGraph.lookup(2, 4), PairGains())
    assert f.root == 0
    assert f.edges() == [(0, 1), (0, 2), (0, 4), (1, 3), (1, 5)]


def test_sons_formation_check_flags_deep_links() -> None:
    """Deep links of a fast formation exceed the envelope."""
    report = sons_formation_check(TargetGraph.lookup(2, 4), IssSettings(), u_sup=2.0)
    assert report
    assert report.depth_gamma == {1: 2.0, 2: 38.0}
    assert report.flagged == [3, 5]
    assert not report.safe
    assert report.p_iss == pytest.approx(1.0 / 39.0)


def test_slow_leader_is_safe() -> None:
    report = sons_formation_check(TargetGraph.lookup(1, 2), u_sup=0.5)
    assert report.safe
    assert report.depth_gamma == {1: 2.0}


def test_export_csv(tmp_path: pathlib.Path) -> None:
    g = PairGains.from_gain(5.0)
    series = simulate_pair((1, 0), (0, 0), (0, 0), g, horizon=0.01, dt=0.001)
    path = export_csv(tmp_path / "iss" / "pair.csv", series)
    lines = path.read_text().splitlines()
    assert lines[0].split(formats.CSV_SEPARATOR) == formats.ISS_SERIES_COLUMNS
    assert len(lines) == 12
    assert lines[1].split(formats.CSV_SEPARATOR) == ["0.0", "1.0", "nan"]

    bound = error_bound(series.time, 1.0, 0.0, g)
    with_bound = export_csv(tmp_path / "bound.csv", series, bound)
    last = with_bound.read_text().splitlines()[-1].split(formats.CSV_SEPARATOR)
    assert float(last[2]) >= float(last[1])
