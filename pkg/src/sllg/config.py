"""Run configuration: one YAML file, overridden by ``SLLG_*`` environment variables and ``--set`` flags.

Precedence (lowest first): built-in defaults, config file, environment, ``--set``.
Environment keys use ``__`` for nesting, e.g. ``SLLG_MODEL__ALPHA=0.5`` or
``SLLG_SEED=3``.  Values from the environment and from ``--set`` are parsed as
YAML scalars/lists.
"""

from __future__ import annotations

import copy
import math
import os
from typing import Any, Mapping

import yaml

from .diagnostics import BlowupConfig
from .field_core import Grid
from .integrator import StepConfig
from .lab import InitialData, TwinRunConfig
from .model import ModelParams

ENV_PREFIX = "SLLG_"

# key -> (type, default).  `list` entries hold floats.
SCHEMA: dict[str, dict[str, tuple[type, Any]] | tuple[type, Any]] = {
    "grid": {"nx": (int, 64), "ny": (int, 64), "lx": (float, 1.0), "ly": (float, 1.0)},
    "model": {"alpha": (float, 1.0), "beta": (float, 0.5), "dealias": (bool, True)},
    "step": {
        "dt": (float, 1e-4),
        "scheme": (str, "imex"),
        "cfl_safety": (float, 0.5),
        "max_dt": (float, 1e-2),
        "min_dt": (float, 1e-9),
        "adaptive": (bool, True),
        "energy_tol": (float, 1e-8),
    },
    "initial": {
        "kind": (str, "fourier-random"),
        "amplitude": (float, 0.2),
        "s_amplitude": (float, 0.5),
        "max_mode": (int, 2),
        "scale": (float, 0.125),
        "center": (list, [0.5, 0.5]),
        "direction": (list, [0.0, 0.0, 1.0]),
        "path": (str, None),
    },
    "run": {
        "t_end": (float, 0.01),
        "cadence": (int, 10),
        "snapshot_times": (list, []),
        "max_steps": (int, None),
    },
    "twin": {
        "delta": (float, 1e-3),
        "perturb": (str, "both"),
        "horizon": (float, 0.01),
        "cadence": (int, 10),
        "mollify_eps": (float, 0.1),
        "seed": (int, 1),
    },
    "lp": {"beta_exp": (float, 0.25)},
    "blowup": {"epsilon0": (float, 2 * math.pi), "R0": (float, 0.125), "stride": (int, 4)},
    "output": {"dir": (str, "out")},
    "seed": (int, 0),
    "threads": (int, 1),
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the key and, when known, the source line."""

    def __init__(self, msg: str, section: str | None = None):
        super().__init__(msg)
        self.section = section


def defaults() -> dict:
    out: dict = {}
    for key, spec in SCHEMA.items():
        if isinstance(spec, dict):
            out[key] = {k: copy.deepcopy(v[1]) for k, v in spec.items()}
        else:
            out[key] = spec[1]
    return out


def _spec(path: tuple[str, ...]):
    node: Any = SCHEMA
    for part in path:
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def _coerce(value, typ: type, key: str, where: str):
    def fail(expected):
        raise ConfigError(f"{where}{key}: expected {expected}, got {value!r}")

    if value is None:
        return None
    if typ is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "yes", "no", "1", "0"):
            return value.lower() in ("true", "yes", "1")
        fail("a boolean")
    if typ is int:
        if isinstance(value, bool):
            fail("an integer")
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                pass
        fail("an integer")
    if typ is float:
        if isinstance(value, bool):
            fail("a number")
        try:
            # YAML 1.1 reads "1e-4" as a string
            return float(value)
        except (TypeError, ValueError):
            fail("a number")
    if typ is str:
        if isinstance(value, (str, int, float)) and not isinstance(value, bool):
            return str(value)
        fail("a string")
    if typ is list:
        if not isinstance(value, (list, tuple)):
            fail("a list of numbers")
        try:
            return [float(v) for v in value]
        except (TypeError, ValueError):
            fail("a list of numbers")
    raise AssertionError(typ)


def _marks(node, prefix=()) -> dict[tuple[str, ...], int]:
    """1-based source line of every key in a composed YAML mapping."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (str(k.value),)
            out[path] = k.start_mark.line + 1
            out.update(_marks(v, path))
    return out


def _merge(cfg: dict, data: Mapping, source: str, lines: dict | None = None, prefix=(),
           origins: dict | None = None) -> None:
    lines = lines or {}
    for key, value in data.items():
        path = prefix + (str(key),)
        dotted = ".".join(path)
        line = lines.get(path)
        where = f"{source}:{line}: " if line else f"{source}: "
        spec = _spec(path)
        if spec is None:
            raise ConfigError(f"{where}unknown key {dotted!r}")
        if isinstance(spec, dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"{where}{dotted}: expected a mapping, got {value!r}")
            _merge(cfg, value, source, lines, path, origins)
            continue
        target = cfg
        for part in path[:-1]:
            target = target[part]
        target[path[-1]] = _coerce(value, spec[0], dotted, where)
        if origins is not None:
            origins[dotted] = where


def _set_dotted(cfg: dict, dotted: str, raw: str, source: str, origins: dict | None = None) -> None:
    parts = tuple(p for p in dotted.split(".") if p)
    if not parts:
        raise ConfigError(f"{source}: empty key")
    value = yaml.safe_load(raw) if raw.strip() else None
    nested: Any = value
    for part in reversed(parts):
        nested = {part: nested}
    _merge(cfg, nested, source, origins=origins)


def load_config(path: str | None = None, overrides: list[str] | tuple = (),
                environ: Mapping[str, str] | None = None) -> dict:
    """Resolve the full configuration; raises ConfigError with line/field on bad input."""
    cfg = defaults()
    origins: dict[str, str] = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            node = yaml.compose(text)
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            loc = f"{path}:{mark.line + 1}" if mark else str(path)
            raise ConfigError(f"{loc}: malformed YAML: {getattr(exc, 'problem', exc)}") from exc
        if data is None:
            data = {}
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path}:1: top level must be a mapping")
        # a manifest carries the resolved config under "config"
        if data.get("kind") == "sllg-manifest":
            data = data.get("config", {})
            node = None
        _merge(cfg, data, str(path), _marks(node) if node is not None else {}, origins=origins)
    env = os.environ if environ is None else environ
    for name in sorted(env):
        if not name.startswith(ENV_PREFIX):
            continue
        dotted = name[len(ENV_PREFIX):].lower().replace("__", ".")
        _set_dotted(cfg, dotted, env[name], f"env {name}", origins)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        _set_dotted(cfg, key.strip(), raw, f"--set {key.strip()}", origins)
    try:
        validate(cfg)
    except ConfigError as exc:
        raise ConfigError(_locate(str(exc), exc.section, cfg, origins), exc.section) from exc
    return cfg


def _locate(msg: str, section: str | None, cfg: dict, origins: dict) -> str:
    """Prefix a domain error with the source of the offending key, if one can be named."""
    if section is None or not isinstance(cfg.get(section), dict):
        return msg
    detail = msg.split(": ", 1)[-1]
    for key in cfg[section]:
        dotted = f"{section}.{key}"
        if dotted in origins and key in detail.replace("-", "_").split()[0:3]:
            return f"{origins[dotted]}{dotted}: {detail}"
    return msg


def _build(cfg: dict, section: str, fn):
    try:
        return fn()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}", section) from exc


def validate(cfg: dict) -> None:
    """Build every typed object once so parameter-domain errors surface at load time."""
    model_params(cfg)
    grid(cfg)
    step_config(cfg)
    initial_data(cfg)
    blowup_config(cfg)
    twin_config(cfg)
    if cfg["threads"] < 1:
        raise ConfigError("threads: must be >= 1")
    r = cfg["run"]
    if r["t_end"] < 0:
        raise ConfigError("run.t_end: must be >= 0")
    if r["cadence"] < 1:
        raise ConfigError("run.cadence: must be >= 1")
    if any(t < 0 or t > r["t_end"] for t in r["snapshot_times"]):
        raise ConfigError("run.snapshot_times: every time must lie in [0, run.t_end]")


def model_params(cfg: dict) -> ModelParams:
    m = cfg["model"]
    return _build(cfg, "model", lambda: ModelParams(alpha=m["alpha"], beta=m["beta"], dealias=m["dealias"]))


def grid(cfg: dict) -> Grid:
    g = cfg["grid"]
    return _build(cfg, "grid", lambda: Grid(g["nx"], g["ny"], g["lx"], g["ly"]))


def step_config(cfg: dict) -> StepConfig:
    return _build(cfg, "step", lambda: StepConfig(**cfg["step"]))


def initial_data(cfg: dict) -> InitialData:
    i, g = cfg["initial"], cfg["grid"]
    return _build(cfg, "initial", lambda: InitialData(
        kind=i["kind"], nx=g["nx"], ny=g["ny"], lx=g["lx"], ly=g["ly"], seed=cfg["seed"],
        amplitude=i["amplitude"], s_amplitude=i["s_amplitude"], max_mode=i["max_mode"],
        scale=i["scale"], center=tuple(i["center"]), direction=tuple(i["direction"]), path=i["path"]))


def blowup_config(cfg: dict) -> BlowupConfig:
    return _build(cfg, "blowup", lambda: BlowupConfig(**cfg["blowup"]))


def twin_config(cfg: dict) -> TwinRunConfig:
    t = cfg["twin"]
    base = initial_data(cfg)
    tc = _build(cfg, "twin", lambda: TwinRunConfig(
        base=base, delta=t["delta"], perturb=t["perturb"], beta_exp=cfg["lp"]["beta_exp"],
        cadence=t["cadence"], horizon=t["horizon"], seed=t["seed"], mollify_eps=t["mollify_eps"],
        threads=cfg["threads"]))
    if not 0 < tc.beta_exp < 0.5:
        raise ConfigError(f"lp.beta_exp: must lie in (0, 1/2), got {tc.beta_exp}")
    return tc
