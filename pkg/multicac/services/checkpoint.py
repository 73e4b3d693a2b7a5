from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from multicac.constants import CHECKPOINT_MAGIC
from multicac.errors import CheckpointError
from multicac.models import Grid, PhaseField

PathLike = Union[str, Path]

_TAIL = struct.Struct("<IdQdddd")  # N, t, step_count, gamma, theta, epsilon, xi


@dataclass(frozen=True, eq=False)
class Checkpoint:
    u: PhaseField
    t: float
    step_count: int
    gamma: float
    theta: float
    epsilon: float
    xi: float


def encode(ck: Checkpoint) -> bytes:
    """MCAC1 bytes: magic, little-endian header, then float64 data component-major in C order."""
    shape = ck.u.grid.shape
    header = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", len(shape))
        + struct.pack(f"<{len(shape)}I", *shape)
        + _TAIL.pack(ck.u.n_phases, ck.t, ck.step_count, ck.gamma, ck.theta, ck.epsilon, ck.xi)
    )
    return header + np.ascontiguousarray(ck.u.data, dtype="<f8").tobytes()


def decode(blob: bytes, extent: Optional[tuple[float, ...]] = None) -> Checkpoint:
    """Parse MCAC1 bytes. The format has no physical extent; it defaults to the unit box."""
    magic = len(CHECKPOINT_MAGIC)
    if blob[:magic] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {blob[:magic]!r}, expected {CHECKPOINT_MAGIC!r}")
    try:
        pos = magic
        (dim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{dim}I", blob, pos)
        pos += 4 * dim
        n, t, step_count, gamma, theta, epsilon, xi = _TAIL.unpack_from(blob, pos)
        pos += _TAIL.size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint header: {exc}") from exc

    expected = n * int(np.prod(shape))
    data = np.frombuffer(blob, dtype="<f8", offset=pos)
    if data.size != expected:
        raise CheckpointError(f"checkpoint holds {data.size} values, header implies {expected}")

    grid = Grid.uniform(shape, extent if extent is not None else (1.0,) * dim)
    u = PhaseField(grid, data.astype(float).reshape((n,) + tuple(shape)))
    return Checkpoint(u=u, t=t, step_count=step_count, gamma=gamma, theta=theta, epsilon=epsilon, xi=xi)


def write_checkpoint(path: PathLike, ck: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(ck))
    return path


def read_checkpoint(path: PathLike, extent: Optional[tuple[float, ...]] = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    return decode(path.read_bytes(), extent)
