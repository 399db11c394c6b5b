"""Run configuration: one TOML file with a section per module.

Every default lives in ``DEFAULTS``; a config file only needs the keys it
changes. The config hash is taken over the resolved configuration, so two
files that resolve to the same values share a hash.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
import zlib
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ConfigHashMismatch, SpecError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

STAGES = ("synth", "propagate", "preprocess", "split", "train", "evaluate", "ablation", "curve")
DEFAULT_STAGES = ("synth", "propagate", "preprocess", "split", "train", "evaluate")

DEFAULTS: dict[str, dict[str, Any]] = {
    "run": {"seed": 0, "threads": 1, "stages": list(DEFAULT_STAGES)},
    "synth": {"preset": "default", "n": 2000},
    "assignment": {"tau": 0.9},
    "preprocess": {
        "margin": 0.10,
        "min_crop_px": 32.0,
        "head_gate": 2.0,
        "required_joints": ["neck", "r_shoulder", "l_shoulder", "r_hip", "l_hip"],
    },
    "evaluation": {
        "fractions": [0.80, 0.15, 0.05],
        "mode": "BySubject",
        "curve_sizes": [100, 300, 1000],
    },
    "regressors": {
        "arch": "deep",
        "features": "both",
        "gender": "all",
        "widths": [256, 256, 256],
        "stream_widths": [128, 64],
        "fusion_width": 128,
        "ridge": 1e-6,
    },
    "training": {
        "lr": 0.01,
        "momentum": 0.9,
        "batch_size": 64,
        "max_epochs": 100,
        "patience": 10,
        "lr_decay": 0.97,
    },
    "baselines": {"offset_method": "mean"},
}


def merge(base: Mapping, override: Mapping, path: str = "") -> dict:
    """Recursive merge; keys absent from ``base`` are rejected, except in
    the ``synth`` section where any population field may be set."""
    out = copy.deepcopy(dict(base))
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in out:
            if path != "synth":
                raise SpecError(f"unknown config key {where!r}")
            out[key] = copy.deepcopy(value)
        elif isinstance(out[key], dict):
            if not isinstance(value, Mapping):
                raise SpecError(f"config key {where!r} must be a table")
            out[key] = merge(out[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | Path | None = None, overrides: Mapping | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise SpecError(f"config file not found: {path}")
        try:
            cfg = merge(cfg, tomllib.loads(path.read_text(encoding="utf-8")))
        except tomllib.TOMLDecodeError as exc:
            raise SpecError(f"{path}: {exc}") from None
    if overrides:
        cfg = merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg: Mapping) -> None:
    stages = cfg["run"]["stages"]
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise SpecError(f"unknown stages {unknown}")
    order = [STAGES.index(s) for s in stages]
    if order != sorted(order):
        raise SpecError(f"stages must follow the order {list(STAGES)}")
    if not 0 < cfg["assignment"]["tau"] <= 1:
        raise SpecError("assignment.tau must lie in (0, 1]")
    if cfg["regressors"]["arch"] not in ("linear", "shallow", "deep"):
        raise SpecError(f"unknown regressors.arch {cfg['regressors']['arch']!r}")
    if cfg["regressors"]["gender"] not in ("all", "female", "male"):
        raise SpecError(f"unknown regressors.gender {cfg['regressors']['gender']!r}")
    if int(cfg["run"]["threads"]) < 1:
        raise SpecError("run.threads must be >= 1")


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def config_hash(cfg: Mapping) -> str:
    return hashlib.sha256(canonical_json(cfg)).hexdigest()[:16]


def stage_seed(seed: int, stage: str) -> int:
    """Named per-stage seed derived from the global one."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(stage.encode()),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# --- provenance sidecars ---------------------------------------------------------


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_sidecar(path: str | Path, cfg_hash: str, producer: str, extra: Mapping | None = None) -> None:
    meta = {"config_hash": cfg_hash, "producer": producer, **(extra or {})}
    sidecar_path(path).write_bytes(canonical_json(meta) + b"\n")


def check_sidecar(path: str | Path, cfg_hash: str, force: bool = False) -> None:
    """Refuse inputs produced under a different config hash unless forced.
    Files without a sidecar (external inputs) are accepted."""
    side = sidecar_path(path)
    if not side.exists():
        return
    recorded = json.loads(side.read_text()).get("config_hash")
    if recorded != cfg_hash and not force:
        raise ConfigHashMismatch(
            f"{path} was produced under config {recorded}, current config is {cfg_hash} (use --force to override)"
        )
