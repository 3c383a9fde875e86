"""Versioned, byte-deterministic checkpoints.

Layout: an 8-byte magic, a little-endian uint32 format version, a uint64
JSON header length, the JSON header (sorted keys), then the raw C-order
float bytes of every parameter in header manifest order (names sorted).
No timestamps or environment data enter the file, so identical runs write
identical bytes; float64 arrays round-trip bit-exactly.

Loading a file whose version differs from FORMAT_VERSION is refused.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .corpus import Vocabulary

MAGIC = b"TSUMCKPT"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or version-mismatched checkpoint."""


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class Checkpoint:
    version: int
    config: dict
    config_digest: str
    vocab: Vocabulary
    params: dict[str, np.ndarray]
    phase: str
    step: int


def save_checkpoint(path, *, config: dict, vocab: Vocabulary,
                    params: dict[str, np.ndarray], phase: str,
                    step: int) -> None:
    names = sorted(params)
    manifest = []
    for name in names:
        arr = np.ascontiguousarray(params[name])
        manifest.append({"name": name, "dtype": str(arr.dtype),
                         "shape": list(arr.shape)})
    meta = {
        "config": config,
        "config_hash": config_hash(config),
        "manifest": manifest,
        "phase": phase,
        "step": step,
        "vocab": vocab.to_dict(),
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(params[name]).tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: format version {version} unsupported "
                f"(this build reads version {FORMAT_VERSION})")
        (meta_len,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        params = {}
        for entry in meta["manifest"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise CheckpointError(f"{path}: truncated parameter data")
            params[entry["name"]] = np.frombuffer(
                buf, dtype=dtype).reshape(shape).copy()
    return Checkpoint(version=version, config=meta["config"],
                      config_digest=meta["config_hash"],
                      vocab=Vocabulary.from_dict(meta["vocab"]),
                      params=params, phase=meta["phase"],
                      step=int(meta["step"]))
