"""Versioned parameter checkpoints (``.npz`` key -> array map).

Arrays are stored as float64 so a save/load round trip is bit exact.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT_VERSION = 1
_VERSION_KEY = "__checkpoint_format__"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | os.PathLike, state: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    if _VERSION_KEY in state:
        raise CheckpointError(f"reserved key {_VERSION_KEY!r} in state")
    arrays = {k: np.asarray(v) for k, v in state.items()}
    arrays[_VERSION_KEY] = np.array(FORMAT_VERSION)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with np.load(Path(path), allow_pickle=False) as npz:
        if _VERSION_KEY not in npz.files:
            raise CheckpointError(f"{path}: not an ecgsal checkpoint")
        version = int(npz[_VERSION_KEY])
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: checkpoint format {version}, expected {FORMAT_VERSION}")
        return {k: npz[k] for k in npz.files if k != _VERSION_KEY}
