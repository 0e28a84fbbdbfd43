"""Tests for sonsim.config."""
import pathlib
import textwrap

import pytest

from _pytest.monkeypatch import MonkeyPatch

from sonsim import exc
from sonsim.config import (
    SCENARIO_PATH_ENV,
    Settings,
    apply_overrides,
    line_of,
    load_scenario_data,
    read_yaml,
    resolve_scenario,
    settings_from_dict,
)


def write(path: pathlib.Path, text: str) -> pathlib.Path:
    path.write_text(textwrap.dedent(text).lstrip(), encoding="utf-8")
    return path


def test_includes_merge_in_order(tmp_path: pathlib.Path) -> None:
    """Included files merge in order, the including file last."""
    write(tmp_path / "base.yaml", "settings:\n  tick: 0.1\n  seed: 4\n")
    write(tmp_path / "more.yaml", "settings:\n  seed: 5\narena:\n  shape: octagon\n")
    main = write(
        tmp_path / "main.yaml",
        """
        include: [base.yaml, more.yaml]
        settings:
          budget_s: 30
        """,
    )
    data, sources = read_yaml(main)
    assert data["settings"] == {"tick": 0.1, "seed": 5, "budget_s": 30}
    assert data["arena"] == {"shape": "octagon"}
    assert [pathlib.Path(s).name for s, _ in sources] == [
        "base.yaml",
        "more.yaml",
        "main.yaml",
    ]


def test_include_cycle(tmp_path: pathlib.Path) -> None:
    """A file including itself is refused."""
    write(tmp_path / "a.yaml", "include: b.yaml\n")
    write(tmp_path / "b.yaml", "include: a.yaml\n")
    with pytest.raises(exc.ConfigError, match="include cycle"):
        read_yaml(tmp_path / "a.yaml")


def test_missing_include(tmp_path: pathlib.Path) -> None:
    write(tmp_path / "a.yaml", "include: gone.yaml\n")
    with pytest.raises(exc.ConfigError, match="cannot read file"):
        read_yaml(tmp_path / "a.yaml")


def test_yaml_syntax_error_has_line(tmp_path: pathlib.Path) -> None:
    """YAML errors carry the line of the mark."""
    bad = write(tmp_path / "bad.yaml", "settings:\n  tick: 0.2\n  seed: [1, 2\n")
    with pytest.raises(exc.ConfigError) as e:
        read_yaml(bad)
    assert e.value.line is not None
    assert e.value.source == str(bad.resolve())


def test_top_level_must_be_mapping(tmp_path: pathlib.Path) -> None:
    with pytest.raises(exc.ConfigError, match="mapping"):
        read_yaml(write(tmp_path / "list.yaml", "- 1\n- 2\n"))


def test_overrides_route_settings() -> None:
    """``key=value`` overrides of setting blocks land under ``settings``."""
    data = apply_overrides(
        {"swarm": {"n": 8}},
        ["swarm.n=20", "protocol.recruitment_metric=cardinality", "name=x"],
    )
    assert data == {
        "swarm": {"n": 20},
        "settings": {"protocol": {"recruitment_metric": "cardinality"}},
        "name": "x",
    }


@pytest.mark.parametrize("expr", ["novalue", "=3"])
def test_bad_override(expr: str) -> None:
    with pytest.raises(exc.ConfigError):
        apply_overrides({}, [expr])


def test_settings_error_points_at_line(tmp_path: pathlib.Path) -> None:
    """Setting errors name the dotted field and its line."""
    path = write(
        tmp_path / "s.yaml",
        """
        settings:
          tick: 0.2
          protocol:
            k1: 0.3
            k3: -1
        """,
    )
    data, sources = read_yaml(path)
    with pytest.raises(exc.ConfigError) as e:
        settings_from_dict(data["settings"], sources)
    assert e.value.field == "protocol.k3"
    assert e.value.line == 5
    assert "must be positive" in str(e.value)


@pytest.mark.parametrize(
    "data, message",
    [
        ({"tick": "fast"}, "expected a number"),
        ({"seed": 1.5}, "expected an integer"),
        ({"sensing": {"relay": "yes"}}, "expected a boolean"),
        ({"iss": {"theta": 1.0}}, "open interval"),
        ({"protocol": {"recruitment_metric": "age"}}, "is not one of"),
        ({"metrics": 3}, "expected a mapping"),
        ({"tick": float("nan")}, "finite"),
    ],
)
def test_settings_validation(data: dict, message: str) -> None:
    with pytest.raises(exc.ConfigError, match=message):
        settings_from_dict(data)


def test_negative_seed_allowed() -> None:
    assert settings_from_dict({"seed": -3}).seed == -3


def test_defaults() -> None:
    """Missing settings fall back to the defaults."""
    s = settings_from_dict(None)
    assert s == Settings()
    assert s.replace(seed=9).seed == 9
    assert s.to_dict()["protocol"]["k1"] == 0.3


def test_line_of_prefers_last_source() -> None:
    sources = [("a.yaml", "x:\n  y: 1\n"), ("b.yaml", "z: 0\nx:\n  y: 2\n")]
    assert line_of(sources, ["x", "y"]) == ("b.yaml", 3)
    assert line_of(sources, ["q"]) == (None, None)


def test_search_path_env(tmp_path: pathlib.Path, monkeypatch: MonkeyPatch) -> None:
    """SONSIM_SCENARIO_PATH directories are searched first."""
    write(tmp_path / "establishment.yaml", "name: mine\n")
    assert resolve_scenario("establishment").parent.name == "scenarios"
    monkeypatch.setenv(SCENARIO_PATH_ENV, str(tmp_path))
    assert resolve_scenario("establishment") == tmp_path / "establishment.yaml"
    data, _ = load_scenario_data("establishment", ["seed=2"])
    assert data == {"name": "mine", "settings": {"seed": 2}}


def test_unknown_scenario() -> None:
    with pytest.raises(exc.ConfigError, match="not found"):
        resolve_scenario("no-such-mission")
