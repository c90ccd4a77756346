"""Binary checkpoint files: named float64 arrays behind an ``SCJD`` header.

Layout (little endian): magic ``SCJD``, version u32, count u32, then per
array: name length u16, UTF-8 name, rank u8, dims u32 each, values f64.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SCJD"
VERSION = 1


class CheckpointError(ValueError):
    pass


def to_bytes(arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def from_bytes(data: bytes) -> dict[str, np.ndarray]:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"truncated checkpoint at offset {pos} reading {what}")
        out = data[pos : pos + n]
        pos += n
        return out

    if take(4, "magic") != MAGIC:
        raise CheckpointError("not an SCJD checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2, "name length"))
        name = take(n, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        size = int(np.prod(dims, dtype=np.int64))
        vals = np.frombuffer(take(8 * size, f"values of {name}"), dtype="<f8").reshape(dims)
        if name in out:
            raise CheckpointError(f"duplicate array name {name!r}")
        out[name] = vals.astype(np.float64)
    if pos != len(data):
        raise CheckpointError(f"trailing bytes at offset {pos}")
    return out


def save(arrays: dict[str, np.ndarray], path) -> None:
    Path(path).write_bytes(to_bytes(arrays))


def load(path) -> dict[str, np.ndarray]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    return from_bytes(p.read_bytes())


def save_module(module, path) -> None:
    save({p.name: p.data for p in module.parameters()}, path)


def load_module(module, path) -> None:
    state = load(path)
    prefix_state = {}
    for p in module.parameters():
        if p.name not in state:
            raise CheckpointError(f"checkpoint {path} lacks parameter {p.name}")
        prefix_state[p.name] = state[p.name]
    own = {p.name: p for p in module.parameters()}
    for name, arr in prefix_state.items():
        if arr.shape != own[name].shape:
            raise CheckpointError(f"{name}: checkpoint shape {arr.shape} != model shape {own[name].shape}")
        own[name].data = arr.copy()
        own[name].grad = np.zeros_like(arr)
