"""Plain-text configuration files.

Files are flat key = value text grouped into [stream], [optimizer],
[experiment] and [grid] sections; keys mirror the dataclass field names
(see StreamConfig, StepConfig, ExperimentConfig). Unknown keys are
rejected so typos fail loudly. The [grid] section holds comma-separated
axis values, e.g. `kappa = 3, 10, 30`.
"""
from __future__ import annotations

import configparser
from dataclasses import fields
from pathlib import Path

from .bench import ExperimentConfig
from .errors import InvalidConfig
from .olbfgs import StepConfig
from .stream import DeletionMode, Regime, StreamConfig

_ENUM_FIELDS = {"regime": Regime, "deletion_mode": DeletionMode}

_BOOLISH = {"true": True, "false": False, "yes": True, "no": False}


def _coerce(raw: str, type_name: str, key: str):
    raw = raw.strip()
    if key in _ENUM_FIELDS:
        try:
            return _ENUM_FIELDS[key](raw)
        except ValueError as exc:
            raise InvalidConfig(f"bad value {raw!r} for {key}") from exc
    try:
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
    except ValueError as exc:
        raise InvalidConfig(f"bad value {raw!r} for {key}") from exc
    if type_name == "bool":
        if raw.lower() not in _BOOLISH:
            raise InvalidConfig(f"bad value {raw!r} for {key}")
        return _BOOLISH[raw.lower()]
    return raw


def _section_kwargs(parser: configparser.ConfigParser, section: str, cls) -> dict:
    if not parser.has_section(section):
        return {}
    known = {f.name: f.type for f in fields(cls)}
    out = {}
    for key, raw in parser.items(section):
        if key not in known:
            raise InvalidConfig(f"unknown key {key!r} in [{section}]")
        out[key] = _coerce(raw, known[key], key)
    return out


_AXIS_TYPES = {
    "kappa": "float",
    "tau": "int",
    "eta": "float",
    "seed": "int",
    "t_del": "int",
    "deletion_mode": "str",
    "regime": "str",
}


def _axis_type(name: str) -> str:
    if name in _AXIS_TYPES:
        return _AXIS_TYPES[name]
    for cls in (StreamConfig, StepConfig):
        for f in fields(cls):
            if f.name == name:
                return f.type
    return "str"


def load_grid_axes(path: str | Path) -> dict[str, list]:
    parser = _read(path)
    axes: dict[str, list] = {}
    if parser.has_section("grid"):
        for key, raw in parser.items("grid"):
            type_name = _axis_type(key)
            values = [v.strip() for v in raw.split(",") if v.strip()]
            if not values:
                raise InvalidConfig(f"grid axis {key!r} has no values")
            if key in ("deletion_mode", "regime"):
                axes[key] = values
            else:
                axes[key] = [_coerce(v, type_name, key) for v in values]
    return axes


def _read(path: str | Path) -> configparser.ConfigParser:
    p = Path(path)
    if not p.is_file():
        raise InvalidConfig(f"config file not found: {p}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(p, encoding="utf-8")
    except configparser.Error as exc:
        raise InvalidConfig(f"cannot parse {p}: {exc}") from exc
    return parser


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build an ExperimentConfig from a file, on top of `base` defaults."""
    parser = _read(path)
    cfg = base if base is not None else ExperimentConfig()

    stream_kwargs = _section_kwargs(parser, "stream", StreamConfig)
    opt_kwargs = _section_kwargs(parser, "optimizer", StepConfig)

    exp_kwargs = {}
    if parser.has_section("experiment"):
        scalar_types = {
            "probe_count": "int",
            "memory_weight": "float",
            "phase_policy": "str",
            "contraction_trials": "int",
            "privacy_epsilon": "float",
            "privacy_delta": "float",
            "exact_recovery_eps": "float",
        }
        for key, raw in parser.items("experiment"):
            if key == "interventions":
                exp_kwargs["interventions"] = tuple(
                    v.strip() for v in raw.split(",") if v.strip()
                )
            elif key == "seeds":
                exp_kwargs["seeds"] = tuple(int(v) for v in raw.split(",") if v.strip())
            elif key in scalar_types:
                exp_kwargs[key] = _coerce(raw, scalar_types[key], key)
            else:
                raise InvalidConfig(f"unknown key {key!r} in [experiment]")

    from dataclasses import replace

    cfg = replace(
        cfg,
        stream=replace(cfg.stream, **stream_kwargs),
        optimizer=replace(cfg.optimizer, **opt_kwargs),
        **exp_kwargs,
    )
    cfg.validate()
    return cfg
