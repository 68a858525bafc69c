"""Versioned array container for checkpoints.

Layout: a NumPy ``.npz`` archive whose ``__meta__`` entry holds a JSON string
(with a ``format_version`` field) and whose remaining entries are row-major
float arrays keyed by parameter name (``param/<name>``, ``adam/m/<name>``,
``adam/v/<name>``). Trainable flags, optimizer hyperparameters, and model
configuration live inside the JSON metadata.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import InputError

FORMAT_VERSION = 1


def save_arrays(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"format_version": FORMAT_VERSION, **meta}
    np.savez_compressed(path, __meta__=np.frombuffer(json.dumps(payload).encode("utf-8"), dtype=np.uint8), **arrays)


def load_arrays(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if "__meta__" not in data:
            raise InputError(f"{path}: missing __meta__ entry")
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise InputError(f"{path}: unsupported format_version {meta.get('format_version')!r}")
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    return meta, arrays
