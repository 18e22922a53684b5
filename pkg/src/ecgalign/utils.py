"""Seeding, hashing, and canonical-JSON helpers shared across modules."""

from __future__ import annotations

import hashlib
import json
import zlib
from pathlib import Path
from typing import Any

import numpy as np


def seed_rng(seed: int, *tags: str | int) -> np.random.Generator:
    """Independent, portable RNG stream derived from (seed, tags)."""
    words = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, int):
            words.append(tag & 0xFFFFFFFF)
        else:
            words.append(zlib.crc32(str(tag).encode("utf-8")))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def code_digest(package_root: str | Path) -> str:
    """Content hash over the package's source files (run provenance)."""
    root = Path(package_root)
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.suffix in (".py", ".pyx") and path.is_file():
            h.update(str(path.relative_to(root)).encode("utf-8"))
            h.update(path.read_bytes())
    return h.hexdigest()


def write_json(path: str | Path, obj: Any, indent: int | None = 1) -> None:
    Path(path).write_text(json.dumps(obj, indent=indent, sort_keys=True) + "\n")
