"""Single-file parameter checkpoints.

Layout: 8-byte magic, 4-byte little-endian header length, UTF-8 JSON header,
then the raw tensor payloads concatenated in header order. Tensors are stored
as little-endian float32, C order. The header carries names, shapes, the run
config hash, and arbitrary extra metadata (model dims, text vocabulary), so a
checkpoint restores without out-of-band files. Serialization is canonical:
sorted names, sorted JSON keys, no timestamps, so identical states produce
identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .autodiff import Tensor

MAGIC = b"ECGALN1\n"


def save_checkpoint(path: str | Path, params: dict[str, Tensor | np.ndarray],
                    config_hash: str = "", extra: dict[str, Any] | None = None) -> None:
    arrays = {}
    for name in sorted(params):
        value = params[name]
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        arrays[name] = np.ascontiguousarray(arr, dtype="<f4")
    header = {
        "version": 1,
        "config_hash": config_hash,
        "tensors": [{"name": n, "shape": list(arrays[n].shape)} for n in sorted(arrays)],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        for spec in header["tensors"]:
            fh.write(arrays[spec["name"]].tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (hlen,) = np.frombuffer(fh.read(4), dtype="<u4")
        header = json.loads(fh.read(int(hlen)).decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise ValueError(f"truncated checkpoint payload for {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    return arrays, header


def params_digest(params: dict[str, Tensor]) -> str:
    """Content hash of parameter values (frozen-encoder guarantees)."""
    import hashlib

    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(params[name].data, dtype="<f4").tobytes())
    return h.hexdigest()
