"""Binary tensor container and the name-indexed checkpoint layout built on it.

One tensor per file: 8-byte magic ``FLMTENS1``, a little-endian u32 rank,
``rank`` little-endian u64 extents, then the row-major little-endian float32
payload. A checkpoint is a directory of such files plus an ``index.tsv``
mapping parameter names to file names.
"""

from __future__ import annotations

import os
from typing import Dict, Mapping

import numpy as np

__all__ = [
    "MAGIC",
    "TensorIOError",
    "write_tensor",
    "read_tensor",
    "save_named_tensors",
    "load_named_tensors",
    "f32_quantize",
]

MAGIC = b"FLMTENS1"
INDEX_NAME = "index.tsv"


class TensorIOError(Exception):
    """Raised on malformed, truncated, or unreadable tensor files."""


def f32_quantize(arr: np.ndarray) -> np.ndarray:
    """Round-trip through float32 so a later write/read cycle is lossless."""
    return np.asarray(arr, dtype=np.float64).astype(np.float32).astype(np.float64)


def write_tensor(path: str, arr: np.ndarray) -> None:
    """Serialize `arr` (any float dtype/rank) as float32."""
    # asarray, not ascontiguousarray: the latter silently promotes 0-d to 1-d
    # and the astype below already yields a contiguous copy
    arr = np.asarray(arr)
    rank = arr.ndim
    header = MAGIC + np.uint32(rank).tobytes()
    header += np.asarray(arr.shape, dtype="<u8").tobytes()
    payload = arr.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_tensor(path: str) -> np.ndarray:
    """Load a tensor file; returns float64 (values exactly as stored)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise TensorIOError(f"cannot read tensor file {path}: {e}") from e
    if len(blob) < 12:
        raise TensorIOError(f"{path}: file shorter than header")
    if blob[:8] != MAGIC:
        raise TensorIOError(f"{path}: bad magic {blob[:8]!r}")
    rank = int(np.frombuffer(blob, dtype="<u4", count=1, offset=8)[0])
    head_end = 12 + 8 * rank
    if len(blob) < head_end:
        raise TensorIOError(f"{path}: truncated extents (rank {rank})")
    shape = tuple(int(x) for x in
                  np.frombuffer(blob, dtype="<u8", count=rank, offset=12))
    count = 1
    for n in shape:
        count *= n
    expected = head_end + 4 * count
    if len(blob) != expected:
        raise TensorIOError(
            f"{path}: payload length {len(blob) - head_end} bytes, "
            f"expected {4 * count} for shape {shape}")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=head_end)
    return data.astype(np.float64).reshape(shape)


def save_named_tensors(dir_path: str, tensors: Mapping[str, np.ndarray]) -> None:
    """Write a checkpoint directory: one tensor file per entry + index.tsv.

    Files are named by insertion order (t0000.flmt, ...) so arbitrary
    parameter names never have to be filesystem-safe.
    """
    os.makedirs(dir_path, exist_ok=True)
    lines = []
    for i, (name, arr) in enumerate(tensors.items()):
        if "\t" in name or "\n" in name:
            raise TensorIOError(f"tensor name {name!r} contains tab/newline")
        fname = f"t{i:04d}.flmt"
        write_tensor(os.path.join(dir_path, fname), np.asarray(arr))
        lines.append(f"{name}\t{fname}\n")
    with open(os.path.join(dir_path, INDEX_NAME), "w") as fh:
        fh.writelines(lines)


def load_named_tensors(dir_path: str) -> Dict[str, np.ndarray]:
    index_path = os.path.join(dir_path, INDEX_NAME)
    try:
        with open(index_path) as fh:
            raw_lines = fh.readlines()
    except OSError as e:
        raise TensorIOError(f"cannot read checkpoint index {index_path}: {e}") from e
    out: Dict[str, np.ndarray] = {}
    for ln, line in enumerate(raw_lines, 1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise TensorIOError(f"{index_path}:{ln}: expected 'name<TAB>file'")
        name, fname = parts
        if name in out:
            raise TensorIOError(f"{index_path}:{ln}: duplicate tensor name {name!r}")
        out[name] = read_tensor(os.path.join(dir_path, fname))
    return out
