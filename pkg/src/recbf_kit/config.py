"""Flat dotted-key configuration files.

A config file is a YAML mapping whose keys are dotted paths into a
(possibly nested) dataclass, e.g. ``delta.dI: 1.15`` or ``poles: [-3, -3.5, -4]``.
Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError


def to_flat(obj, prefix: str = "") -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        if not f.metadata.get("config", True):
            continue
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.update(to_flat(value, key + "."))
        elif isinstance(value, Mapping):
            for k, v in value.items():
                out[f"{key}.{k}"] = _plain(v)
        else:
            out[key] = _plain(value)
    return out


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, list):
        return [_plain(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (list, tuple, dict)):
        return value.item()
    return value


def _coerce(key: str, value, default):
    if default is None:
        return value
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, str):
            return str(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                value = yaml.safe_load(value)
            if not isinstance(value, (list, tuple)):
                raise ValueError(value)
            if default and not isinstance(default[0], str):
                return tuple(_coerce(key, v, default[0]) for v in value)
            return tuple(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot interpret {value!r} like {default!r}") from exc
    return value


def from_flat(cls, flat: Mapping[str, Any], base=None):
    """Build ``cls`` from dotted keys layered over ``base`` (or the defaults)."""
    obj = base if base is not None else cls()
    for key, value in flat.items():
        obj = _set(obj, key.split("."), value, key)
    return obj


def _set(obj, path, value, full_key):
    names = {f.name for f in dataclasses.fields(obj) if f.metadata.get("config", True)}
    head = path[0]
    if head not in names:
        raise ConfigError(f"unknown config key {full_key!r}")
    current = getattr(obj, head)
    if len(path) == 1:
        if dataclasses.is_dataclass(current) or isinstance(current, Mapping):
            if isinstance(value, Mapping):
                for k, v in value.items():
                    obj = _set(obj, [head, *str(k).split(".")], v, f"{full_key}.{k}")
                return obj
            raise ConfigError(f"{full_key!r} is a section, not a value")
        return dataclasses.replace(obj, **{head: _coerce(full_key, value, current)})
    if dataclasses.is_dataclass(current):
        return dataclasses.replace(obj, **{head: _set(current, path[1:], value, full_key)})
    if isinstance(current, Mapping):
        sub = ".".join(path[1:])
        if sub not in current:
            raise ConfigError(f"unknown config key {full_key!r}")
        new = dict(current)
        new[sub] = _coerce(full_key, value, current[sub])
        return dataclasses.replace(obj, **{head: new})
    raise ConfigError(f"{full_key!r}: {head!r} has no sub-keys")


def parse_override(text: str) -> tuple:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from exc
    return key.strip(), value


def load_flat(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return _flatten_mapping(data)


def _flatten_mapping(data, prefix=""):
    out = {}
    for k, v in data.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten_mapping(v, key + "."))
        else:
            out[key] = v
    return out


def dump_flat(obj, path) -> None:
    flat = to_flat(obj)
    Path(path).write_text(yaml.safe_dump(flat, sort_keys=True, default_flow_style=None))
