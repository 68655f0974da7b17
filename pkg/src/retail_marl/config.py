"""Run configuration (JSON) and stage manifests keyed by content hashes."""

from __future__ import annotations

import copy
import datetime as dt
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .env import DEFAULT_MULTIPLIERS
from .marl.trainer import TrainConfig

WORKDIR_ENV = "RETAIL_MARL_WORKDIR"

DEFAULTS: dict = {
    "paths": {"raw_data": None, "work_dir": "work"},
    "ingest": {"window": None, "top_n": 60, "cost_ratio": 0.7},
    "graph": {"tau": 2, "k": 12, "weight": "count"},
    "demand": {"split": None, "ridge_penalty": 1.0},
    "env": {"multipliers": list(DEFAULT_MULTIPLIERS), "horizon": 19, "lambda_stab": 0.0, "gamma": 1.0,
            "stride": 1, "val_days": 14},
    "train": {"seeds": [0], "archs": ["mappo", "mappo-gat"]},
    "eval": {"episodes": 100, "crn_namespace": "test", "lambda_grid": [], "n_boot": 10_000},
}


class ConfigError(ValueError):
    pass


class StaleUpstreamError(RuntimeError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    data: dict
    source: Path | None = None

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            raw = json.load(fh)
        unknown = set(raw) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        data = _merge(DEFAULTS, raw)
        base = path.parent
        for key in ("raw_data", "work_dir"):
            val = data["paths"].get(key)
            if val and not Path(val).is_absolute():
                data["paths"][key] = str((base / val).resolve())
        return cls(data, path)

    def override(self, *, seeds=None, archs=None, lambda_grid=None, out_dir=None) -> "RunConfig":
        d = copy.deepcopy(self.data)
        env_dir = os.environ.get(WORKDIR_ENV)
        if env_dir:
            d["paths"]["work_dir"] = str(Path(env_dir).resolve())
        if out_dir:
            d["paths"]["work_dir"] = str(Path(out_dir).resolve())
        if seeds is not None:
            d["train"]["seeds"] = list(seeds)
        if archs is not None:
            d["train"]["archs"] = list(archs)
        if lambda_grid is not None:
            d["eval"]["lambda_grid"] = list(lambda_grid)
        return RunConfig(d, self.source)

    @property
    def work_dir(self) -> Path:
        return Path(self.data["paths"]["work_dir"])

    def window(self) -> tuple[dt.date, dt.date]:
        w = self.data["ingest"]["window"]
        if not w:
            raise ConfigError("ingest.window is required")
        return dt.date.fromisoformat(w[0]), dt.date.fromisoformat(w[1])

    def split(self) -> dt.date:
        s = self.data["demand"]["split"]
        if not s:
            raise ConfigError("demand.split is required")
        return dt.date.fromisoformat(s)

    def train_config(self, seed: int) -> TrainConfig:
        fields = {k: v for k, v in self.data["train"].items() if k not in ("seeds", "archs")}
        fields["gamma"] = self.data["env"]["gamma"]
        fields["seed"] = seed
        return TrainConfig.from_dict(fields)

    def stage_view(self, stage: str) -> dict:
        """Config sections a stage depends on; used for its manifest hash."""
        deps = {"ingest": ["paths", "ingest", "demand"], "graph": ["graph"], "fit": ["demand"],
                "train": ["env", "train"], "eval": ["env", "eval"], "report": ["eval"]}[stage]
        view = {k: self.data[k] for k in deps}
        if "paths" in view:
            view = {**view, "paths": {"raw_data": Path(view["paths"]["raw_data"] or "").name}}
        return view


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _rel(path: Path, root: Path) -> str:
    path = path.resolve()
    return str(path.relative_to(root.resolve())) if path.is_relative_to(root.resolve()) else "external:" + path.name


def write_manifest(stage_dir: Path, stage: str, cfg: RunConfig, inputs: list[Path], outputs: list[Path],
                   extra: dict | None = None) -> Path:
    root = cfg.work_dir
    manifest = {
        "stage": stage,
        "config": cfg.stage_view(stage),
        "config_hash": sha256_json(cfg.stage_view(stage)),
        "inputs": {_rel(p, root): sha256_file(p) for p in inputs},
        "outputs": {_rel(p, root): sha256_file(p) for p in outputs},
        **(extra or {}),
    }
    path = stage_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def check_stage(cfg: RunConfig, stage_dir: Path, upstream_of: str, name: str | None = None) -> dict:
    """Verify a finished stage: its manifest exists, its outputs and recorded inputs are unchanged."""
    root = cfg.work_dir
    path = stage_dir / "manifest.json"
    name = name or stage_dir.name
    if not path.is_file():
        raise StaleUpstreamError(f"{upstream_of}: upstream stage '{name}' has no manifest at {path}; run it first")
    with open(path) as fh:
        manifest = json.load(fh)
    for rel, digest in {**manifest["outputs"], **manifest["inputs"]}.items():
        if rel.startswith("external:"):
            continue
        p = root / rel
        if not p.is_file():
            raise StaleUpstreamError(f"{upstream_of}: {p} recorded by stage '{name}' is missing; rerun '{name}'")
        if sha256_file(p) != digest:
            raise StaleUpstreamError(f"{upstream_of}: {rel} changed since stage '{name}' ran "
                                     f"(stale hash); rerun '{name}' and downstream stages")
    return manifest
