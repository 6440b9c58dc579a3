"""Field snapshots and particle trajectory dumps.

Snapshot binary layout (little endian)::

    8s      magic b"UTSNAP01"
    uint32  dim
    int64   cells_per_axis[dim]
    int64   n
    float64 t
    float64 values[prod(cells_per_axis)]    row-major over cells

The CSV variant starts with ``# key=value`` lines for the same header fields
followed by one value per line.

Trajectory binary layout::

    8s      magic b"UTTRAJ01"
    uint32  dim
    uint64  num_particles
    repeated: int64 n, float64 t, float64 positions[num_particles * dim]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SNAPSHOT_MAGIC = b"UTSNAP01"
TRAJECTORY_MAGIC = b"UTTRAJ01"


@dataclass
class Snapshot:
    dim: int
    cells_per_axis: tuple[int, ...]
    n: int
    t: float
    values: np.ndarray


def write_snapshot(path, field, fmt: str | None = None) -> Path:
    """Dump a :class:`~upwind_transport.scheme.CellField`; ``fmt`` is ``"bin"`` or ``"csv"``.

    The format defaults to the file suffix (``.csv`` selects CSV).
    """
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "bin")
    cells = tuple(int(c) for c in field.mesh.shape)
    vals = np.ascontiguousarray(field.values, dtype="<f8").ravel()
    if fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(SNAPSHOT_MAGIC)
            fh.write(struct.pack("<I", len(cells)))
            fh.write(struct.pack(f"<{len(cells)}q", *cells))
            fh.write(struct.pack("<qd", int(field.n), float(field.t)))
            fh.write(vals.tobytes())
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# dim={len(cells)}\n")
            fh.write(f"# cells_per_axis={','.join(map(str, cells))}\n")
            fh.write(f"# n={int(field.n)}\n# t={float(field.t)!r}\n")
            fh.writelines(f"{float(v)!r}\n" for v in vals)
    else:
        raise ValueError(f"unknown snapshot format {fmt!r}")
    return path


def read_snapshot(path) -> Snapshot:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(SNAPSHOT_MAGIC))
    if head == SNAPSHOT_MAGIC:
        return _read_binary_snapshot(path)
    return _read_csv_snapshot(path)


def _read_binary_snapshot(path):
    data = path.read_bytes()
    off = len(SNAPSHOT_MAGIC)
    (dim,) = struct.unpack_from("<I", data, off)
    off += 4
    cells = struct.unpack_from(f"<{dim}q", data, off)
    off += 8 * dim
    n, t = struct.unpack_from("<qd", data, off)
    off += 16
    vals = np.frombuffer(data, dtype="<f8", offset=off)
    if vals.size != int(np.prod(cells)):
        raise ValueError(f"{path}: expected {int(np.prod(cells))} values, found {vals.size}")
    return Snapshot(dim, tuple(cells), n, t, vals.reshape(cells).astype(float))


def _read_csv_snapshot(path):
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
    try:
        dim = int(meta["dim"])
        cells = tuple(int(c) for c in meta["cells_per_axis"].split(","))
        n, t = int(meta["n"]), float(meta["t"])
    except KeyError as exc:
        raise ValueError(f"{path}: snapshot header lacks {exc}") from None
    vals = np.loadtxt(path, comments="#", ndmin=1)
    if len(cells) != dim or vals.size != int(np.prod(cells)):
        raise ValueError(f"{path}: header and data disagree")
    return Snapshot(dim, cells, n, t, vals.reshape(cells))


class TrajectoryWriter:
    """Streams lifted particle positions, one record per step."""

    def __init__(self, path, num_particles: int, dim: int):
        self.path = Path(path)
        self.num_particles = int(num_particles)
        self.dim = int(dim)
        self._fh = open(self.path, "wb")
        self._fh.write(TRAJECTORY_MAGIC)
        self._fh.write(struct.pack("<IQ", self.dim, self.num_particles))

    def write(self, n: int, t: float, positions: np.ndarray):
        pos = np.ascontiguousarray(positions, dtype="<f8")
        if pos.shape != (self.num_particles, self.dim):
            raise ValueError(f"expected positions of shape {(self.num_particles, self.dim)}")
        self._fh.write(struct.pack("<qd", int(n), float(t)))
        self._fh.write(pos.tobytes())

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_trajectory(path):
    """Return ``(steps, times, positions)`` with positions of shape ``(steps, particles, dim)``."""
    data = Path(path).read_bytes()
    if data[:len(TRAJECTORY_MAGIC)] != TRAJECTORY_MAGIC:
        raise ValueError(f"{path}: not a trajectory dump")
    off = len(TRAJECTORY_MAGIC)
    dim, m = struct.unpack_from("<IQ", data, off)
    off += 12
    rec = np.dtype([("n", "<i8"), ("t", "<f8"), ("pos", "<f8", (m, dim))])
    body = np.frombuffer(data, dtype=rec, offset=off)
    return body["n"].copy(), body["t"].copy(), body["pos"].astype(float)
