"""JSON model checkpoints: named tensors plus architecture and training
config. Floats are written with ``repr`` precision so loading is bit-exact."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .layers import Param

FORMAT = "mouseadv-checkpoint"
VERSION = 1


def checkpoint_dict(arch: Mapping[str, Any], params: Mapping[str, Param | np.ndarray], config: Mapping[str, Any] | None = None) -> dict:
    tensors = {}
    for name, p in params.items():
        v = p.values if isinstance(p, Param) else np.asarray(p, dtype=float)
        tensors[name] = {"shape": list(v.shape), "data": v.ravel().tolist()}
    return {"format": FORMAT, "version": VERSION, "arch": dict(arch), "config": dict(config or {}), "params": tensors}


def save_checkpoint(path: str | Path, arch: Mapping[str, Any], params: Mapping[str, Param | np.ndarray], config: Mapping[str, Any] | None = None) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(arch, params, config)), encoding="utf-8")


def parse_checkpoint(d: Mapping[str, Any]) -> tuple[dict, dict[str, np.ndarray], dict]:
    if d.get("format") != FORMAT:
        raise ValueError("not a mouseadv checkpoint")
    if d.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    params = {k: np.asarray(t["data"], dtype=float).reshape(t["shape"]) for k, t in d["params"].items()}
    return dict(d["arch"]), params, dict(d.get("config", {}))


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray], dict]:
    return parse_checkpoint(json.loads(Path(path).read_text(encoding="utf-8")))


def write_checkpoint(d: Mapping[str, Any], path: str | Path) -> None:
    """Write an already assembled checkpoint dict (see ``checkpoint_dict``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(d), encoding="utf-8")


def read_checkpoint(path: str | Path) -> dict:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    parse_checkpoint(d)
    return d
