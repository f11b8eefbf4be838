"""Build (nested, frozen) dataclass configs from plain dicts."""

from __future__ import annotations

import dataclasses
import typing

from .errors import ValidationError


def from_dict(cls, data: dict | None, where: str = "config"):
    """Instantiate ``cls`` from ``data``; unknown keys are an error."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ValidationError(f"{where} must be an object")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")
    kw = {}
    for k, v in data.items():
        typ = hints.get(k)
        if dataclasses.is_dataclass(typ) and isinstance(v, dict):
            kw[k] = from_dict(typ, v, f"{where}.{k}")
        elif isinstance(v, list):
            kw[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        else:
            kw[k] = v
    try:
        return cls(**kw)
    except TypeError as e:
        raise ValidationError(f"{where}: {e}") from None


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)
