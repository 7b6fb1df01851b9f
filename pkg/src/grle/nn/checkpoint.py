"""Parameter checkpoints: one ``.npz`` holding every array plus a JSON shape manifest."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import Tensor

MANIFEST_KEY = "__manifest__"


def save_params(path: str | Path, params: dict[str, Tensor], meta: dict | None = None) -> None:
    manifest = {"params": {k: list(t.shape) for k, t in params.items()}, "meta": meta or {}}
    arrays = {k: t.data for k, t in params.items()}
    arrays[MANIFEST_KEY] = np.array(json.dumps(manifest, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def read_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as z:
        manifest = json.loads(str(z[MANIFEST_KEY]))
        arrays = {k: z[k].copy() for k in manifest["params"]}
    for k, shape in manifest["params"].items():
        if list(arrays[k].shape) != shape:
            raise ValueError(f"{k}: stored shape {arrays[k].shape} disagrees with manifest {shape}")
    return arrays, manifest["meta"]


def load_params(path: str | Path, params: dict[str, Tensor]) -> dict:
    """Overwrite ``params`` in place from a checkpoint; returns its metadata."""
    arrays, meta = read_checkpoint(path)
    missing = set(params) ^ set(arrays)
    if missing:
        raise KeyError(f"checkpoint and model disagree on parameters: {sorted(missing)}")
    for k, t in params.items():
        if arrays[k].shape != t.shape:
            raise ValueError(f"{k}: checkpoint shape {arrays[k].shape}, model {t.shape}")
        t.data = arrays[k]
    return meta
