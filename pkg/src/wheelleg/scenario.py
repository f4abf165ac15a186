"""Scenario files: TOML sections for the path, obstacles, controller, robot and behavior.

A scenario file looks like::

    [scenario]
    name = "test1"

    [path]
    preset = "line1"

    [controller]
    N_p = 60
    N_c = 30

Omitted keys take their defaults; unknown keys are rejected with their line.
"""
from __future__ import annotations

import dataclasses
import re
from importlib import resources
from pathlib import Path as FsPath

import tomli
import tomli_w

from .behavior import BehaviorConfig, Obstacle
from .mpc import MpcConfig
from .params import PARAM_KEYS, load_params, params_from_dict
from .reference import PathSpec, build_scenario_paths, load_waypoints
from .sim import ScenarioConfig

SECTIONS = ("scenario", "path", "obstacles", "controller", "robot", "behavior")
PRESET_DIR = "data/presets"

_SCENARIO_KEYS = ("name", "duration", "dt_plant", "lookahead", "chassis_mode", "tire_mode",
                  "seed", "width_noise", "record_timing", "reconverge_band")
_PATH_KEYS = tuple(f.name for f in dataclasses.fields(PathSpec)) + ("preset", "waypoint_file")
_OBSTACLE_KEYS = tuple(f.name for f in dataclasses.fields(Obstacle))
_CONTROLLER_KEYS = tuple(f.name for f in dataclasses.fields(MpcConfig))
_ROBOT_KEYS = tuple(PARAM_KEYS) + ("param_file",)
_BEHAVIOR_KEYS = tuple(f.name for f in dataclasses.fields(BehaviorConfig))


class ScenarioError(ValueError):
    """Scenario text is malformed or describes an invalid configuration."""


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    """Best-effort line number of ``[section]`` or of ``key`` inside it."""
    if text is None:
        return None
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[\[?\s*([A-Za-z0-9_.-]+)\s*\]\]?", s)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return lineno
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", s):
            return lineno
    return None


def _where(source, text, section, key=None) -> str:
    line = _line_of(text, section, key)
    loc = f"{source}:{line}" if line else str(source)
    return f"{loc}: [{section}]" + (f" {key}" if key else "")


def _check_keys(table: dict, allowed, section: str, source, text):
    if not isinstance(table, dict):
        raise ScenarioError(f"{_where(source, text, section)}: expected a table")
    for key in table:
        if key not in allowed:
            raise ScenarioError(f"{_where(source, text, section, key)}: unknown key {key!r}; "
                                f"allowed: {', '.join(allowed)}")


def _build(cls, values: dict, section: str, source, text):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        key = next((k for k in values if k in str(exc)), None)
        raise ScenarioError(f"{_where(source, text, section, key)}: {exc}") from None


def _tupled(v):
    return tuple(_tupled(x) for x in v) if isinstance(v, list) else v


def _path_spec(table: dict, base_dir: FsPath, source, text) -> PathSpec:
    table = dict(table)
    preset = table.pop("preset", None)
    wp_file = table.pop("waypoint_file", None)
    if wp_file is not None:
        wp = FsPath(wp_file)
        if not wp.is_absolute():
            wp = base_dir / wp
        try:
            table["waypoints"] = load_waypoints(wp)
        except OSError as exc:
            raise ScenarioError(f"{_where(source, text, 'path', 'waypoint_file')}: {exc}") from None
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None
        table.setdefault("kind", "waypoint-spline")
    if "waypoints" in table:
        table["waypoints"] = _tupled(table["waypoints"])
    if preset is not None:
        presets = build_scenario_paths()
        if preset not in presets:
            raise ScenarioError(f"{_where(source, text, 'path', 'preset')}: unknown preset "
                                f"{preset!r}; expected one of {sorted(presets)}")
        base = presets[preset]
        if "kind" in table and table["kind"] != base.kind:
            raise ScenarioError(f"{_where(source, text, 'path', 'kind')}: conflicts with preset {preset!r}")
        try:
            return dataclasses.replace(base, **table)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{_where(source, text, 'path')}: {exc}") from None
    if "kind" not in table:
        raise ScenarioError(f"{_where(source, text, 'path')}: a path needs 'preset' or 'kind'")
    return _build(PathSpec, table, "path", source, text)


def scenario_from_dict(raw: dict, source="<scenario>", text: str | None = None,
                       base_dir: FsPath | None = None) -> ScenarioConfig:
    base_dir = FsPath(".") if base_dir is None else base_dir
    for section in raw:
        if section not in SECTIONS:
            raise ScenarioError(f"{_where(source, text, section)}: unknown section {section!r}; "
                                f"allowed: {', '.join(SECTIONS)}")
    if "path" not in raw:
        raise ScenarioError(f"{source}: missing required [path] section")

    sc = raw.get("scenario", {})
    _check_keys(sc, _SCENARIO_KEYS, "scenario", source, text)
    _check_keys(raw["path"], _PATH_KEYS, "path", source, text)
    path = _path_spec(raw["path"], base_dir, source, text)

    obstacles = []
    obs_list = raw.get("obstacles", [])
    if not isinstance(obs_list, list):
        raise ScenarioError(f"{_where(source, text, 'obstacles')}: use [[obstacles]] array tables")
    for item in obs_list:
        _check_keys(item, _OBSTACLE_KEYS, "obstacles", source, text)
        obstacles.append(_build(Obstacle, item, "obstacles", source, text))

    ctrl = dict(raw.get("controller", {}))
    _check_keys(ctrl, _CONTROLLER_KEYS, "controller", source, text)
    controller = _build(MpcConfig, {k: _tupled(v) for k, v in ctrl.items()}, "controller", source, text)

    rob = dict(raw.get("robot", {}))
    _check_keys(rob, _ROBOT_KEYS, "robot", source, text)
    param_file = rob.pop("param_file", None)
    try:
        if param_file is not None:
            pf = FsPath(param_file)
            base = load_params(pf if pf.is_absolute() else base_dir / pf)
        else:
            base = load_params()
        robot = params_from_dict({k: _tupled(v) for k, v in rob.items()}, base)
    except OSError as exc:
        raise ScenarioError(f"{_where(source, text, 'robot', 'param_file')}: {exc}") from None
    except (KeyError, TypeError, ValueError, tomli.TOMLDecodeError) as exc:
        raise ScenarioError(f"{_where(source, text, 'robot')}: {exc}") from None

    beh = raw.get("behavior", {})
    _check_keys(beh, _BEHAVIOR_KEYS, "behavior", source, text)
    behavior = _build(BehaviorConfig, beh, "behavior", source, text)

    values = dict(sc)
    values.setdefault("name", path.name or FsPath(str(source)).stem)
    return _build(ScenarioConfig, dict(values, path=path, obstacles=tuple(obstacles),
                                       controller=controller, robot=robot, behavior=behavior),
                  "scenario", source, text)


def _coerce(value: str):
    try:
        return tomli.loads(f"v = {value}")["v"]
    except tomli.TOMLDecodeError:
        return value


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings in order; later ones win.

    Obstacle fields are addressed by index, ``obstacles.0.width=1.5``.
    Values are read as TOML literals, falling back to a bare string.
    """
    for item in overrides or ():
        if "=" not in item:
            raise ScenarioError(f"override {item!r}: expected key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) < 2 or parts[0] not in SECTIONS:
            raise ScenarioError(f"override {item!r}: key must be <section>.<name> with section "
                                f"in {', '.join(SECTIONS)}")
        if parts[0] == "obstacles":
            if len(parts) != 3 or not parts[1].isdigit():
                raise ScenarioError(f"override {item!r}: use obstacles.<index>.<field>")
            obs = raw.setdefault("obstacles", [])
            i = int(parts[1])
            if i > len(obs):
                raise ScenarioError(f"override {item!r}: obstacle index {i} out of range")
            if i == len(obs):
                obs.append({})
            obs[i][parts[2]] = _coerce(value.strip())
            continue
        if len(parts) != 2:
            raise ScenarioError(f"override {item!r}: key must be <section>.<name>")
        raw.setdefault(parts[0], {})[parts[1]] = _coerce(value.strip())
    return raw


def preset_names() -> list[str]:
    root = resources.files("wheelleg").joinpath(PRESET_DIR)
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def preset_text(name: str) -> str:
    if name not in preset_names():
        raise ScenarioError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return resources.files("wheelleg").joinpath(PRESET_DIR, f"{name}.toml").read_text()


def parse_scenario_text(text: str, source="<scenario>", overrides=(),
                        base_dir: FsPath | None = None) -> ScenarioConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    return scenario_from_dict(apply_overrides(raw, overrides), source, text, base_dir)


def parse_scenario(path, overrides=()) -> ScenarioConfig:
    """Read a scenario file, or a shipped preset when ``path`` names one."""
    p = FsPath(path)
    if not p.exists() and str(path) in preset_names():
        return parse_scenario_text(preset_text(str(path)), f"preset:{path}", overrides)
    try:
        text = p.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read scenario {path}: {exc.strerror or exc}") from None
    return parse_scenario_text(text, p, overrides, p.parent)


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    """Fully explicit form; reading it back yields an equal ScenarioConfig."""
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        return v

    def table(obj, skip=()):
        return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if f.init and f.name not in skip and getattr(obj, f.name) is not None}

    return {
        "scenario": {k: getattr(cfg, k) for k in _SCENARIO_KEYS},
        "path": table(cfg.path),
        "obstacles": [table(o) for o in cfg.obstacles],
        "controller": table(cfg.controller),
        "robot": {k: plain(v) for k, v in cfg.robot.to_dict().items()},
        "behavior": table(cfg.behavior),
    }


def dump_scenario(cfg: ScenarioConfig) -> str:
    raw = scenario_to_dict(cfg)
    if not raw["obstacles"]:
        del raw["obstacles"]
    return tomli_w.dumps(raw)
