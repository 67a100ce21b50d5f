"""Checkpoint container: text header + raw little-endian float32 payload.

Layout: a magic line, a JSON header line listing tensor names/shapes
plus arbitrary metadata, then the tensors' bytes concatenated in
declaration order.  Round trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from irisauth.errors import CheckpointError

__all__ = ["save_checkpoint", "load_checkpoint"]

MAGIC = b"IRISCKPT 1\n"


def save_checkpoint(path: Path, tensors: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    """Write named float32 arrays (insertion order preserved)."""
    entries = []
    blobs = []
    for name, arr in tensors.items():
        arr32 = np.asarray(arr, dtype=np.float32)  # keeps 0-d rank
        entries.append({"name": name, "shape": list(arr32.shape)})
        blobs.append(arr32.astype("<f4", copy=False).tobytes())
    header = json.dumps({"meta": meta or {}, "tensors": entries},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read back (meta, name -> float32 array), bit-exact."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != MAGIC:
            raise CheckpointError(f"bad checkpoint magic in {path}: {magic!r}")
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"bad checkpoint header in {path}: {exc}") from exc
        tensors: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise CheckpointError(
                    f"truncated payload for tensor {entry['name']!r} in {path}")
            tensors[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError(f"trailing bytes after payload in {path}")
    return header.get("meta", {}), tensors
