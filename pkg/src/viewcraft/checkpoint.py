"""Named-tensor archives: parameters plus their config, round-tripping bit-exactly.

The same format backs encoder and viewmaker checkpoints; the trainer composes
these into its per-step checkpoint directories.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from pathlib import Path

import torch

from .errors import CheckpointMismatch, IOFailure

_FORMAT_PREFIX = "viewcraft"
_FORMAT_VERSION = 1


def config_to_dict(config) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(cls, data: dict):
    """Rebuild a (possibly nested) dataclass config from its dict form.

    Handles Optional fields, nested dataclasses, and list -> tuple coercion
    (JSON round-trips turn tuples into lists).
    """
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        hint = hints.get(f.name)
        if typing.get_origin(hint) in (typing.Union, types.UnionType):
            non_none = [a for a in typing.get_args(hint) if a is not type(None)]
            if len(non_none) == 1:
                hint = non_none[0]
        if dataclasses.is_dataclass(hint) and isinstance(value, dict):
            value = config_from_dict(hint, value)
        elif typing.get_origin(hint) is tuple and isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    return cls(**kwargs)


def save_archive(path, kind: str, config, state_dict: dict, extra: dict | None = None) -> None:
    payload = {
        "format": f"{_FORMAT_PREFIX}/{kind}@{_FORMAT_VERSION}",
        "config": config_to_dict(config),
        "state_dict": state_dict,
    }
    if extra:
        payload["extra"] = extra
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_archive(path, kind: str, config_cls):
    path = Path(path)
    if not path.exists():
        raise IOFailure(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    expected = f"{_FORMAT_PREFIX}/{kind}@{_FORMAT_VERSION}"
    if payload.get("format") != expected:
        raise CheckpointMismatch(
            f"{path} holds {payload.get('format')!r}, expected {expected!r}"
        )
    config = config_from_dict(config_cls, payload["config"])
    return config, payload["state_dict"]
