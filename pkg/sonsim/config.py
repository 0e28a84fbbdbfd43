"""Scenario files and typed settings.

sonsim.config
~~~~~~~~~~~~~

Scenario files are YAML. A file may pull shared blocks in with a top-level
``include:`` list; included files are deep-merged in order and the including
file is merged on top. ``key.path=value`` overrides are applied last.

The ``settings:`` block of a scenario maps onto :class:`Settings`. Every other
top-level block (arena, robots, target graphs, obstacles, faults, script) is
read by :mod:`sonsim.missions`.

"""
import copy
import dataclasses
import logging
import math
import os
import pathlib
import typing as t

import yaml

from . import exc

logger = logging.getLogger(__name__)

#: Bundled scenario directory
SCENARIO_DIR = pathlib.Path(__file__).parent / "scenarios"

#: Extra scenario search directories, ``os.pathsep`` separated
SCENARIO_PATH_ENV = "SONSIM_SCENARIO_PATH"

RECRUITMENT_METRICS = ("rank", "cardinality", "lexicographic")
VEHICLE_MODELS = ("kinematic", "full")

ConfigDict = t.Dict[str, t.Any]
Sources = t.List[t.Tuple[str, str]]


@dataclasses.dataclass(frozen=True)
class ProtocolConstants:

    """Constants of the per-robot SoNS protocol.

    Distances in meters, speeds in m/s, angular speeds in rad/s. The angular
    reference laws reuse the linear ones with ``omega_*`` and ``k*_ang``.
    """

    v_max_aerial: float = 2.0
    v_max_ground: float = 1.0
    v_default: float = 0.5
    k1: float = 0.3
    k2: float = 1.0
    k3: float = 1.5
    k4: float = 0.1
    k5: float = 0.02
    omega_max: float = 1.0
    omega_default: float = 0.5
    k4_ang: float = 0.1
    k5_ang: float = 0.02
    #: steps a link survives without its counterpart being sensed
    staleness_ceiling: int = 5
    recruitment_metric: str = "rank"
    #: factor applied to ``v_hier`` while a child reports a local override
    damping: float = 0.5
    max_children: int = 8
    #: steps without a recruitment candidate before an incomplete brain wanders
    wander_patience: int = 10
    #: speed of a wandering brain
    v_wander: float = 0.3
    #: planar slot error up to which a child counts as on its slot
    settle_range: float = 0.5
    #: steps between repeated target assignments to an unchanged child
    reassign_period: int = 5
    #: avoidance ranges between robots of the same type
    robot_k1: float = 0.1
    robot_k3: float = 0.4
    #: distance a child must be closer to its parent's slot to substitute it
    substitution_margin: float = 0.5
    #: distance at which a redistributed child is handed to its new parent
    handover_range: float = 1.2

    def v_max(self, robot_type: str) -> float:
        return self.v_max_aerial if robot_type == "aerial" else self.v_max_ground


@dataclasses.dataclass(frozen=True)
class SensingSettings:
    fov_half_angle_deg: float = 45.0
    sigma_pos: float = 0.01
    sigma_ang_deg: float = 1.0
    #: aerial robots relay what they see to the ground robots they see
    relay: bool = True


@dataclasses.dataclass(frozen=True)
class VehicleSettings:

    """Physical parameters and low-level controller gains.

    ``model: kinematic`` integrates the commanded velocities directly;
    ``model: full`` runs the quadrotor rigid-body model with its cascaded
    controllers and motor lag.
    """

    model: str = "kinematic"
    altitude: float = 1.5
    substeps: int = 10
    gravity: float = 9.81
    mass: float = 1.0
    jx: float = 0.01
    jy: float = 0.01
    jz: float = 0.02
    arm: float = 0.12
    k_t: float = 1e-5
    k_m: float = 1e-6
    t_rot: float = 0.05
    max_tilt_deg: float = 20.0
    vel_kp: float = 2.0
    vel_ki: float = 0.0
    vel_kd: float = 0.0
    vz_kp: float = 4.0
    vz_ki: float = 0.0
    angle_kp: float = 6.0
    rate_kp: float = 0.2
    rate_ki: float = 0.0
    rate_kd: float = 0.0
    yaw_rate_kp: float = 0.2
    integral_limit: float = 1.0
    wheel_max: float = 1.0
    ground_radius: float = 0.035
    stabilization: bool = False
    gyro_sigma: float = 0.0
    gyro_bias_walk: float = 0.0
    accel_sigma: float = 0.0
    accel_bias_walk: float = 0.0
    mag_sigma: float = 0.0


@dataclasses.dataclass(frozen=True)
class MetricSettings:
    epsilon: float = 0.1
    window: int = 25
    ci_level: float = 0.95


@dataclasses.dataclass(frozen=True)
class IssSettings:
    gain: float = 5.0
    theta: float = 0.5
    dt: float = 0.001
    horizon: float = 10.0
    #: largest acceptable ultimate bound, in meters, at the leader's v_max
    envelope: float = 5.0


@dataclasses.dataclass(frozen=True)
class Settings:

    """All tunables of one run.

    Examples
    --------
    >>> s = Settings()
    >>> s.tick, s.budget_steps
    (0.2, 2500)
    >>> s.protocol.v_max("aerial")
    2.0
    """

    tick: float = 0.2
    seed: int = 0
    budget_s: float = 500.0
    protocol: ProtocolConstants = dataclasses.field(
        default_factory=ProtocolConstants
    )
    sensing: SensingSettings = dataclasses.field(default_factory=SensingSettings)
    vehicles: VehicleSettings = dataclasses.field(default_factory=VehicleSettings)
    metrics: MetricSettings = dataclasses.field(default_factory=MetricSettings)
    iss: IssSettings = dataclasses.field(default_factory=IssSettings)

    @property
    def budget_steps(self) -> int:
        return int(round(self.budget_s / self.tick))

    def replace(self, **changes: t.Any) -> "Settings":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> ConfigDict:
        return dataclasses.asdict(self)


#: Values that must be strictly positive; all other numbers must be >= 0
_POSITIVE = {
    "tick",
    "budget_s",
    "protocol.v_max_aerial",
    "protocol.v_max_ground",
    "protocol.k3",
    "protocol.staleness_ceiling",
    "protocol.max_children",
    "vehicles.substeps",
    "vehicles.mass",
    "vehicles.jx",
    "vehicles.jy",
    "vehicles.jz",
    "vehicles.arm",
    "vehicles.k_t",
    "vehicles.k_m",
    "vehicles.t_rot",
    "vehicles.wheel_max",
    "metrics.window",
    "iss.gain",
    "iss.dt",
}

_CHOICES = {
    "protocol.recruitment_metric": RECRUITMENT_METRICS,
    "vehicles.model": VEHICLE_MODELS,
}

#: Open unit interval
_UNIT_INTERVAL = {"iss.theta", "metrics.ci_level", "protocol.damping"}

_SIGNED = {"seed"}


def deep_merge(
    base: t.Mapping[str, t.Any], override: t.Mapping[str, t.Any]
) -> ConfigDict:
    """Merge ``override`` into a copy of ``base``, recursing into mappings.

    >>> deep_merge({"a": {"b": 1, "c": 2}}, {"a": {"c": 3}, "d": 4})
    {'a': {'b': 1, 'c': 3}, 'd': 4}
    """
    merged: ConfigDict = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, t.Mapping) and isinstance(merged.get(key), t.Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _safe_load(text: str, source: str) -> t.Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(e, "problem", None) or str(e)
        raise exc.ConfigError(f"invalid YAML: {problem}", source=source, line=line)


def read_yaml(
    path: t.Union[str, pathlib.Path], _seen: t.Optional[t.Set[pathlib.Path]] = None
) -> t.Tuple[ConfigDict, Sources]:
    """Load a YAML mapping and resolve its ``include:`` list.

    Returns
    -------
    tuple
        merged mapping, and ``(path, text)`` of every file read (including file
        last) for line diagnostics
    """
    path = pathlib.Path(path).resolve()
    seen = set() if _seen is None else _seen
    if path in seen:
        raise exc.ConfigError("include cycle", source=str(path))
    seen.add(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise exc.ConfigError(f"cannot read file: {e.strerror}", source=str(path))

    data = _safe_load(text, str(path))
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise exc.ConfigError("top level must be a mapping", source=str(path), line=1)

    includes = data.pop("include", []) or []
    if isinstance(includes, str):
        includes = [includes]
    merged: ConfigDict = {}
    sources: Sources = []
    for inc in includes:
        inc_data, inc_sources = read_yaml(path.parent / inc, seen)
        merged = deep_merge(merged, inc_data)
        sources.extend(inc_sources)
    merged = deep_merge(merged, data)
    sources.append((str(path), text))
    logger.debug("loaded %s with %d include(s)", path, len(includes))
    return merged, sources


def parse_override(expr: str) -> t.Tuple[t.List[str], t.Any]:
    """Split ``key.path=value``; the value is parsed as YAML.

    >>> parse_override("protocol.k1=0.4")
    (['protocol', 'k1'], 0.4)
    >>> parse_override("name=sweep")
    (['name'], 'sweep')
    """
    if "=" not in expr:
        raise exc.ConfigError(f"override '{expr}' is not of the form key=value")
    key, raw = expr.split("=", 1)
    keys = [k for k in key.strip().split(".") if k]
    if not keys:
        raise exc.ConfigError(f"override '{expr}' has an empty key")
    return keys, _safe_load(raw, "--set")


_SETTINGS_KEYS = {f.name for f in dataclasses.fields(Settings)}


def apply_overrides(
    data: t.Mapping[str, t.Any], overrides: t.Iterable[str]
) -> ConfigDict:
    """Apply ``--set`` style overrides to scenario data.

    Keys that name a :class:`Settings` field are routed into ``settings:``.

    >>> apply_overrides({}, ["protocol.k1=0.4", "seed=3"])
    {'settings': {'protocol': {'k1': 0.4}, 'seed': 3}}
    """
    result = copy.deepcopy(dict(data))
    for expr in overrides:
        keys, value = parse_override(expr)
        if keys[0] in _SETTINGS_KEYS:
            keys = ["settings"] + keys
        node = result
        for k in keys[:-1]:
            child = node.get(k)
            if not isinstance(child, dict):
                child = {}
                node[k] = child
            node = child
        node[keys[-1]] = value
    return result


def line_of(
    sources: Sources, keys: t.Sequence[str]
) -> t.Tuple[t.Optional[str], t.Optional[int]]:
    """Find the file and 1-based line defining the dotted key path ``keys``."""
    for source, text in reversed(sources):
        try:
            node = yaml.compose(text)
        except yaml.YAMLError:
            continue
        for key in keys:
            if not isinstance(node, yaml.MappingNode):
                node = None
                break
            match = None
            for key_node, value_node in node.value:
                if getattr(key_node, "value", None) == key:
                    match = (key_node, value_node)
            if match is None:
                node = None
                break
            line = match[0].start_mark.line + 1
            node = match[1]
        if node is not None:
            return source, line
    return None, None


def _check_number(dotted: str, value: float) -> t.Optional[str]:
    if not math.isfinite(value):
        return "must be finite"
    if dotted in _SIGNED:
        return None
    if dotted in _UNIT_INTERVAL and not 0.0 < value < 1.0:
        return "must lie in the open interval (0, 1)"
    if dotted in _POSITIVE and value <= 0:
        return "must be positive"
    if value < 0:
        return "must not be negative"
    return None


def _build(cls: t.Any, data: t.Any, prefix: str, sources: Sources) -> t.Any:
    def fail(message: str, dotted: str) -> "exc.ConfigError":
        source, line = line_of(sources, ["settings"] + dotted.split("."))
        return exc.ConfigError(message, source=source, line=line, field=dotted)

    if data is None:
        data = {}
    if not isinstance(data, t.Mapping):
        raise fail("expected a mapping", prefix or "settings")

    hints = t.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs: t.Dict[str, t.Any] = {}
    for key, value in data.items():
        dotted = f"{prefix}.{key}" if prefix else str(key)
        if key not in names:
            raise fail("unknown key", dotted)
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, dotted, sources)
            continue
        if hint is bool:
            if not isinstance(value, bool):
                raise fail(f"expected a boolean, got {value!r}", dotted)
        elif hint is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise fail(f"expected an integer, got {value!r}", dotted)
        elif hint is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise fail(f"expected a number, got {value!r}", dotted)
            value = float(value)
        elif hint is str:
            if not isinstance(value, str):
                raise fail(f"expected a string, got {value!r}", dotted)
        if hint in (int, float):
            problem = _check_number(dotted, value)
            if problem is not None:
                raise fail(f"{value!r} {problem}", dotted)
        choices = _CHOICES.get(dotted)
        if choices is not None and value not in choices:
            raise fail(f"{value!r} is not one of {', '.join(choices)}", dotted)
        kwargs[key] = value
    return cls(**kwargs)


def settings_from_dict(
    data: t.Optional[t.Mapping[str, t.Any]], sources: t.Optional[Sources] = None
) -> Settings:
    """Validate a ``settings:`` mapping into :class:`Settings`.

    Raises
    ------
    :exc:`exc.ConfigError`
        unknown key, wrong type or out-of-range value, with the dotted field path

    Examples
    --------
    >>> settings_from_dict({"protocol": {"k1": 0.4}}).protocol.k1
    0.4
    >>> settings_from_dict({"protocol": {"k6": 1}})
    Traceback (most recent call last):
    ...
    sonsim.exc.ConfigError: field 'protocol.k6': unknown key
    >>> settings_from_dict({"vehicles": {"model": "jet"}})
    Traceback (most recent call last):
    ...
    sonsim.exc.ConfigError: field 'vehicles.model': 'jet' is not one of kinematic, full
    """
    built = _build(Settings, data, "", sources or [])
    assert isinstance(built, Settings)
    return built


def scenario_search_path() -> t.List[pathlib.Path]:
    """Directories searched for scenario names, bundled directory last."""
    extra = os.getenv(SCENARIO_PATH_ENV, "")
    dirs = [pathlib.Path(p) for p in extra.split(os.pathsep) if p]
    return dirs + [SCENARIO_DIR]


def resolve_scenario(name: t.Union[str, pathlib.Path]) -> pathlib.Path:
    """Find a scenario file by path, or by name in :func:`scenario_search_path`.

    >>> resolve_scenario("establishment").name
    'establishment.yaml'
    """
    path = pathlib.Path(name)
    if path.is_file():
        return path
    stem = path.name if path.suffix in (".yaml", ".yml") else f"{path.name}.yaml"
    for directory in scenario_search_path():
        candidate = directory / stem
        if candidate.is_file():
            return candidate
    raise exc.ConfigError(f"scenario '{name}' not found", source=str(name))


def load_scenario_data(
    name: t.Union[str, pathlib.Path], overrides: t.Iterable[str] = ()
) -> t.Tuple[ConfigDict, Sources]:
    """Read a scenario file with includes and overrides applied."""
    data, sources = read_yaml(resolve_scenario(name))
    return apply_overrides(data, overrides), sources
