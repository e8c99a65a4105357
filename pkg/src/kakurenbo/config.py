"""TOML run configuration with dotted-key overrides.

A config file fills in any subset of the sections below; command-line
overrides use dotted keys (``--hiding.max-fraction 0.3``), with dashes and
underscores interchangeable.  Unknown sections or keys are rejected by
name.  ``echo_toml`` serializes the effective config back out so every run
directory records exactly what it ran with.
"""

from __future__ import annotations

import copy
import dataclasses
import json

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from .harness import DatasetConfig, ModelConfig, RunConfig
from .hiding import HidingConfig
from .optim import OptimConfig


class ConfigError(Exception):
    pass


_SECTION_ORDER = ("dataset", "model", "optim", "hiding", "run", "sb", "forget")


def default_config() -> dict:
    """Nested dict of every section at its default value."""
    return {
        "dataset": dataclasses.asdict(DatasetConfig()),
        "model": dataclasses.asdict(ModelConfig()),
        "optim": {k: _tuple_to_list(v) for k, v in dataclasses.asdict(OptimConfig()).items()},
        "hiding": {k: _tuple_to_list(v) for k, v in dataclasses.asdict(HidingConfig()).items()},
        "run": {"strategy": "baseline", "batch_size": 128, "epochs": 10,
                "seed": 42, "jobs": 1},
        "sb": {"beta": 1.0, "window": 1024},
        "forget": {"count_epochs": 20},
    }


def _tuple_to_list(v):
    return list(v) if isinstance(v, tuple) else v


def _norm(name: str) -> str:
    return name.replace("-", "_")


def load_config(path: str | None = None) -> dict:
    """Defaults, optionally overlaid with a TOML file (unknown keys rejected)."""
    cfg = copy.deepcopy(default_config())
    if path is None:
        return cfg
    try:
        with open(path, "rb") as f:
            parsed = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    for section, body in parsed.items():
        s = _norm(section)
        if s not in cfg:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be a table")
        for key, value in body.items():
            _set(cfg, s, _norm(key), value, f"{section}.{key}")
    return cfg


def apply_override(cfg: dict, dotted_key: str, raw_value: str) -> None:
    """Apply one ``section.key = value`` override with string coercion."""
    key = _norm(dotted_key)
    if "." not in key:
        raise ConfigError(
            f"override {dotted_key!r} must be section.key (e.g. hiding.max-fraction)"
        )
    section, name = key.split(".", 1)
    if section not in cfg:
        raise ConfigError(f"unknown config section {section!r} in --{dotted_key}")
    if name not in cfg[section]:
        raise ConfigError(f"unknown config key {dotted_key!r}")
    template = cfg[section][name]
    cfg[section][name] = _coerce_str(raw_value, template, dotted_key)


def _set(cfg: dict, section: str, key: str, value, label: str) -> None:
    if key not in cfg[section]:
        raise ConfigError(f"unknown config key {label!r}")
    template = cfg[section][key]
    cfg[section][key] = _coerce_value(value, template, label)


def _coerce_value(value, template, label: str):
    """Typed merge of a TOML-parsed value against the default's type."""
    if isinstance(template, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(template, int) and not isinstance(template, bool):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(template, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(template, str):
        if isinstance(value, str):
            return value
    elif isinstance(template, list):
        if isinstance(value, list):
            return [_num(v, label) for v in value]
    raise ConfigError(
        f"bad type for {label!r}: expected {type(template).__name__}, "
        f"got {type(value).__name__}"
    )


def _num(v, label: str):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{label!r} entries must be numbers")
    return v


def _coerce_str(raw: str, template, label: str):
    try:
        if isinstance(template, bool):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(template, int) and not isinstance(template, bool):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        if isinstance(template, str):
            return raw
        if isinstance(template, list):
            body = raw.strip().strip("[]")
            if not body.strip():
                return []
            parts = [p.strip() for p in body.split(",")]
            try:
                return [int(p) for p in parts]
            except ValueError:
                return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(
            f"bad value {raw!r} for --{label} (expected {type(template).__name__})"
        ) from None
    raise ConfigError(f"cannot override {label!r}")


def build_run_config(cfg: dict) -> RunConfig:
    """Construct and validate the RunConfig; all failures become ConfigError."""
    try:
        o = cfg["optim"]
        h = cfg["hiding"]
        rc = RunConfig(
            dataset=DatasetConfig(**cfg["dataset"]),
            model=ModelConfig(**cfg["model"]),
            optim=OptimConfig(**{**o, "milestones": tuple(o["milestones"])}),
            hiding=HidingConfig(**{
                **h,
                "decay_factors": tuple(h["decay_factors"]),
                "decay_milestones": tuple(h["decay_milestones"]),
            }),
            strategy=cfg["run"]["strategy"],
            batch_size=cfg["run"]["batch_size"],
            epochs=cfg["run"]["epochs"],
            seed=cfg["run"]["seed"],
            jobs=cfg["run"]["jobs"],
            sb_beta=cfg["sb"]["beta"],
            sb_window=cfg["sb"]["window"],
            forget_count_epochs=cfg["forget"]["count_epochs"],
        )
        rc.validate()
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from None
    return rc


def echo_toml(cfg: dict) -> str:
    """Serialize the effective config as TOML (subset: tables of scalars
    and numeric arrays, which is all a config holds)."""
    lines = []
    for section in _SECTION_ORDER:
        lines.append(f"[{section}]")
        for key, value in cfg[section].items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {type(v).__name__} to TOML")
