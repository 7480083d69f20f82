"""Binary state checkpoints.

Layout (little-endian): magic ``CBLB``, u32 version, u32 K, u32 J, f64 L_Y,
f64 t, then u1, u2, theta as complex128 arrays of shape (2K+1, 2J+1) in
row-major order.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .dynamics import FlowState
from .grid import SpectralGrid

MAGIC = b"CBLB"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")


class CheckpointError(ValueError):
    pass


def dumps(state: FlowState) -> bytes:
    g = state.grid
    head = _HEADER.pack(MAGIC, VERSION, g.K, g.J, float(g.L_Y), float(state.t))
    body = np.ascontiguousarray(state.packed(), dtype="<c16").tobytes()
    return head + body


def loads(data: bytes, dealias_fraction: float = 2.0 / 3.0) -> FlowState:
    if len(data) < _HEADER.size:
        raise CheckpointError(f"checkpoint truncated: {len(data)} bytes is shorter than the {_HEADER.size}-byte header")
    magic, version, K, J, L_Y, t = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (this reader handles version {VERSION})")
    grid = SpectralGrid(K, J, L_Y, dealias_fraction)
    n = 3 * grid.n_modes * 16
    body = data[_HEADER.size:]
    if len(body) != n:
        raise CheckpointError(f"checkpoint length mismatch: expected {n} payload bytes, found {len(body)}")
    U = np.frombuffer(body, dtype="<c16").reshape((3,) + grid.shape).astype(np.complex128)
    return FlowState.from_packed(t, grid, U)


def write_checkpoint(state: FlowState, path) -> Path:
    """Write atomically (temporary file then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(state))
    os.replace(tmp, path)
    return path


def read_checkpoint(path, dealias_fraction: float = 2.0 / 3.0) -> FlowState:
    return loads(Path(path).read_bytes(), dealias_fraction)
