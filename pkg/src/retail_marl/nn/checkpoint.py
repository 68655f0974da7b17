"""Versioned JSON parameter checkpoints with named groups. Floats round-trip exactly."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .layers import Parameter

FORMAT = "retail-marl-params"
VERSION = 1


class CheckpointError(ValueError):
    pass


def params_to_dict(params: Mapping[str, Parameter], meta: dict | None = None) -> dict:
    groups: dict[str, dict] = {}
    for name, p in params.items():
        groups.setdefault(p.group, {})[name] = {"shape": list(p.data.shape),
                                                "values": [float(v) for v in p.data.ravel()]}
    return {"format": FORMAT, "version": VERSION, "meta": meta or {}, "groups": groups}


def load_into(params: Mapping[str, Parameter], payload: dict) -> dict:
    """Copy checkpoint values into ``params``; returns the checkpoint meta."""
    if payload.get("format") != FORMAT or payload.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint format {payload.get('format')!r} v{payload.get('version')}")
    flat = {name: rec for grp in payload["groups"].values() for name, rec in grp.items()}
    missing = sorted(set(params) - set(flat))
    extra = sorted(set(flat) - set(params))
    if missing or extra:
        raise CheckpointError(f"checkpoint schema mismatch: missing={missing} unexpected={extra}")
    for name, p in params.items():
        rec = flat[name]
        if tuple(rec["shape"]) != p.data.shape:
            raise CheckpointError(f"shape mismatch for {name}: {rec['shape']} vs {list(p.data.shape)}")
        p.data = np.array(rec["values"], dtype=np.float64).reshape(rec["shape"])
    return payload.get("meta", {})


def save(params: Mapping[str, Parameter], path: str | Path, meta: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(params_to_dict(params, meta), fh)
        fh.write("\n")


def load(params: Mapping[str, Parameter], path: str | Path) -> dict:
    with open(path) as fh:
        return load_into(params, json.load(fh))
