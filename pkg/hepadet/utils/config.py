"""Helpers turning JSON sections into typed dataclasses and back."""

import dataclasses
from fractions import Fraction
from typing import Any, Dict, Mapping, Type, TypeVar

from hepadet.errors import ConfigError

T = TypeVar("T")


def from_dict(cls: Type[T], data: Mapping[str, Any], section: str = "") -> T:
    """Build dataclass ``cls`` from ``data``, rejecting unknown keys."""
    if not isinstance(data, Mapping):
        raise ConfigError(f"section {section or cls.__name__} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {section or cls.__name__}: {unknown}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"invalid {section or cls.__name__}: {err}") from err


def _plain(value: Any) -> Any:
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def to_dict(obj: Any) -> Dict[str, Any]:
    """JSON-ready dict of a dataclass instance (fractions become strings)."""
    return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
