"""
Checkpoint files: named parameter tensors as versioned JSON.

Layout (UTF-8, one JSON object, keys in this order):
    {"format": "cascade-checkpoint", "version": 1,
     "meta": {"num_stages": "2", ...},
     "tensors": [{"name": "backbone.conv1.weight", "shape": [16, 3, 3, 3],
                  "values": [... row-major floats ...]}, ...]}

Floats are written with Python's shortest round-trip repr, so save -> load is
exact in value and the bytes depend only on the tensors and meta.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Literal, Mapping

import numpy as np
from pydantic import BaseModel, ValidationError, model_validator

from src.numerics.tensor import Tensor
from src.storage import files
from src.utils.errors import CheckpointError

CHECKPOINT_FORMAT = "cascade-checkpoint"
CHECKPOINT_VERSION = 1


class TensorRecord(BaseModel):
    name: str
    shape: list[int]
    values: list[float]

    @model_validator(mode="after")
    def _size_matches_shape(self) -> "TensorRecord":
        if int(np.prod(self.shape)) != len(self.values):
            raise ValueError(f"{self.name}: shape {self.shape} does not match {len(self.values)} values")
        return self


class CheckpointFile(BaseModel):
    format: Literal["cascade-checkpoint"] = CHECKPOINT_FORMAT
    version: int = CHECKPOINT_VERSION
    meta: dict[str, str] = {}
    tensors: list[TensorRecord]


def dump_bytes(named: Mapping[str, Tensor | np.ndarray], meta: Mapping[str, str] | None = None) -> bytes:
    records = []
    for name, value in named.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        records.append(TensorRecord(name=name, shape=list(arr.shape), values=arr.reshape(-1).tolist()))
    doc = CheckpointFile(meta=dict(meta or {}), tensors=records)
    return json.dumps(doc.model_dump(), allow_nan=False).encode("utf-8")


def load_bytes(data: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Parse checkpoint bytes; returns (name -> array, meta)."""
    try:
        doc = CheckpointFile.model_validate(json.loads(data.decode("utf-8")))
    except (ValueError, ValidationError) as e:
        raise CheckpointError(f"unreadable checkpoint: {e}") from e
    if doc.version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.version} (expected {CHECKPOINT_VERSION})")
    arrays = {r.name: np.array(r.values, dtype=np.float64).reshape(r.shape) for r in doc.tensors}
    return arrays, doc.meta


def save(path: str | os.PathLike, named: Mapping[str, Tensor | np.ndarray], meta: Mapping[str, str] | None = None) -> Path:
    return files.write_bytes(path, dump_bytes(named, meta))


def load(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    if not files.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    return load_bytes(files.read_bytes(path))
