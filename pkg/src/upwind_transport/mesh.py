"""Uniform Cartesian tessellations of axis-parallel boxes in one or two dimensions.

Cells are addressed by integer tuples ``(i_1, ..., i_d)`` and stored in
row-major order (last axis fastest).  A cell ``(i_1, ..., i_d)`` occupies the
half-open box ``[i_1 h_1, (i_1 + 1) h_1) x ... x [i_d h_d, (i_d + 1) h_d)``.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

DEFAULT_REGULARITY = 4.0


class Boundary(str, enum.Enum):
    PERIODIC = "periodic"
    NOFLUX = "noflux"


class Side(enum.IntEnum):
    LOW = 0
    HIGH = 1


class EdgeId(NamedTuple):
    """One face of a cell: ``cell`` index tuple, normal ``axis`` and ``side``."""

    cell: tuple[int, ...]
    axis: int
    side: Side


@dataclass(frozen=True, eq=False)
class CartesianMesh:
    """Immutable structured mesh.

    Use :func:`build_mesh` rather than the constructor so that the inputs are
    validated.
    """

    extent: tuple[float, ...]
    cells_per_axis: tuple[int, ...]
    boundary: Boundary
    regularity: float = DEFAULT_REGULARITY
    _widths: tuple[float, ...] = field(init=False, repr=False)

    def __post_init__(self):
        widths = tuple(e / n for e, n in zip(self.extent, self.cells_per_axis))
        object.__setattr__(self, "_widths", widths)

    @property
    def dim(self) -> int:
        return len(self.cells_per_axis)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells_per_axis

    @property
    def widths(self) -> tuple[float, ...]:
        """Cell widths ``h_i`` per axis."""
        return self._widths

    @property
    def h(self) -> float:
        """Mesh size: the diameter of a cell."""
        return math.sqrt(sum(w * w for w in self._widths))

    @property
    def num_cells(self) -> int:
        return math.prod(self.cells_per_axis)

    @property
    def cell_volume(self) -> float:
        return math.prod(self._widths)

    @property
    def volume(self) -> float:
        return math.prod(self.extent)

    @property
    def periodic(self) -> bool:
        return self.boundary is Boundary.PERIODIC

    def edge_area(self, axis: int) -> float:
        """``|K|L|`` for a face normal to ``axis`` (1 in one dimension)."""
        return math.prod(w for j, w in enumerate(self._widths) if j != axis)

    def tau(self, axis: int) -> float:
        """Relative inverse length scale ``|K|L| / |K|`` of faces normal to ``axis``."""
        return self.edge_area(axis) / self.cell_volume

    def num_faces(self, axis: int) -> int:
        """Number of distinct physical faces normal to ``axis`` (boundary faces included)."""
        n = self.cells_per_axis[axis]
        other = self.num_cells // n
        return other * (n if self.periodic else n + 1)

    @property
    def num_edges(self) -> int:
        return sum(self.num_faces(a) for a in range(self.dim))

    def face_shape(self, axis: int) -> tuple[int, ...]:
        """Array shape used to store one value per face normal to ``axis``.

        Face ``j`` along ``axis`` is the low face of cell ``j``.  Periodic meshes
        store ``n`` faces (face 0 doubles as the high face of cell ``n - 1``);
        no-flux meshes store ``n + 1`` including both boundary faces.
        """
        shape = list(self.cells_per_axis)
        if not self.periodic:
            shape[axis] += 1
        return tuple(shape)

    def centroids(self) -> np.ndarray:
        """Cell centroids as an array of shape ``mesh.shape + (dim,)``."""
        axes = [(np.arange(n) + 0.5) * w for n, w in zip(self.cells_per_axis, self._widths)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack(grids, axis=-1)

    def cell_corner(self, cell: Sequence[int]) -> np.ndarray:
        return np.array([i * w for i, w in zip(cell, self._widths)])

    def cells(self) -> Iterator[tuple[int, ...]]:
        return itertools.product(*(range(n) for n in self.cells_per_axis))

    def is_boundary(self, edge: EdgeId) -> bool:
        if self.periodic:
            return False
        i = edge.cell[edge.axis]
        n = self.cells_per_axis[edge.axis]
        return (edge.side is Side.LOW and i == 0) or (edge.side is Side.HIGH and i == n - 1)

    def neighbor(self, edge: EdgeId) -> tuple[int, ...] | None:
        """Cell across ``edge``, or ``None`` for a boundary face."""
        self._check_edge(edge)
        if self.is_boundary(edge):
            return None
        step = 1 if edge.side is Side.HIGH else -1
        cell = list(edge.cell)
        cell[edge.axis] = (cell[edge.axis] + step) % self.cells_per_axis[edge.axis]
        return tuple(cell)

    def face_index(self, edge: EdgeId) -> tuple[int, ...]:
        """Storage index of ``edge`` inside an array of :meth:`face_shape`."""
        self._check_edge(edge)
        idx = list(edge.cell)
        if edge.side is Side.HIGH:
            idx[edge.axis] += 1
            if self.periodic:
                idx[edge.axis] %= self.cells_per_axis[edge.axis]
        return tuple(idx)

    def canonical(self, edge: EdgeId) -> tuple[int, tuple[int, ...]]:
        """Key identifying the physical face, shared by both of its cell-side ids."""
        return edge.axis, self.face_index(edge)

    def normal(self, edge: EdgeId) -> np.ndarray:
        """Outward unit normal ``nu_KL`` of ``edge`` seen from ``edge.cell``."""
        nu = np.zeros(self.dim)
        nu[edge.axis] = 1.0 if edge.side is Side.HIGH else -1.0
        return nu

    def cell_edges(self, cell: Sequence[int]) -> list[EdgeId]:
        cell = tuple(cell)
        return [EdgeId(cell, a, s) for a in range(self.dim) for s in (Side.LOW, Side.HIGH)]

    def edges(self) -> Iterator[EdgeId]:
        """Every physical face exactly once (as seen from its low-side cell when possible)."""
        for cell in self.cells():
            for a in range(self.dim):
                yield EdgeId(cell, a, Side.HIGH)
                if not self.periodic and cell[a] == 0:
                    yield EdgeId(cell, a, Side.LOW)

    def isoperimetric_ratio(self) -> float:
        """``|dK| / |K|`` of every (identical) cell."""
        return sum(2.0 * self.tau(a) for a in range(self.dim))

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Map points into the fundamental box of a periodic mesh."""
        x = np.asarray(x, dtype=float)
        return np.mod(x, np.asarray(self.extent))

    def locate(self, x: np.ndarray) -> np.ndarray:
        """Vectorized :func:`locate_cell` for points of shape ``(..., dim)``.

        Returns integer indices of shape ``(..., dim)``.
        """
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"points must have trailing dimension {self.dim}, got {x.shape}")
        ext = np.asarray(self.extent)
        n = np.asarray(self.cells_per_axis)
        if self.periodic:
            x = np.mod(x, ext)
        elif np.any((x < 0) | (x > ext)):
            raise ValueError("point outside the closed domain of a no-flux mesh")
        idx = np.floor(x / np.asarray(self._widths)).astype(np.int64)
        # x == extent (closed upper boundary, or mod round-off) belongs to the last cell
        return np.minimum(idx, n - 1) if not self.periodic else np.mod(idx, n)

    def flat_index(self, idx: np.ndarray) -> np.ndarray:
        """Row-major linear index of integer cell indices of shape ``(..., dim)``."""
        idx = np.asarray(idx)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), self.cells_per_axis)

    def _check_edge(self, edge: EdgeId) -> None:
        if len(edge.cell) != self.dim or not 0 <= edge.axis < self.dim:
            raise ValueError(f"invalid edge {edge!r} for a {self.dim}-d mesh")
        if any(not 0 <= i < n for i, n in zip(edge.cell, self.cells_per_axis)):
            raise ValueError(f"cell {edge.cell} outside mesh of shape {self.shape}")

    def same_as(self, other: "CartesianMesh") -> bool:
        return (
            self.cells_per_axis == other.cells_per_axis
            and self.boundary is other.boundary
            and np.allclose(self.extent, other.extent, rtol=1e-14, atol=0)
        )

    def __repr__(self) -> str:
        return (
            f"CartesianMesh(extent={self.extent}, cells_per_axis={self.cells_per_axis}, "
            f"boundary={self.boundary.value})"
        )


def _as_tuple(value, dim, cast):
    if np.ndim(value) == 0:
        return (cast(value),) * dim
    out = tuple(cast(v) for v in value)
    if len(out) != dim:
        raise ValueError(f"expected {dim} entries, got {len(out)}")
    return out


def build_mesh(dim, extent, cells_per_axis, boundary="periodic", regularity=DEFAULT_REGULARITY):
    """Build a validated :class:`CartesianMesh`.

    Parameters
    ----------
    dim : int
        Space dimension, 1 or 2.
    extent : float or sequence of float
        Physical length of the box along each axis.
    cells_per_axis : int or sequence of int
    boundary : {"periodic", "noflux"} or Boundary
    regularity : float
        Mesh-regularity constant ``C`` in ``h <= C h_i``.
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    extent = _as_tuple(extent, dim, float)
    cells = _as_tuple(cells_per_axis, dim, int)
    if any(not math.isfinite(e) or e <= 0 for e in extent):
        raise ValueError(f"extents must be positive, got {extent}")
    if any(n < 1 for n in cells):
        raise ValueError(f"cells_per_axis must be >= 1, got {cells}")
    if np.ndim(cells_per_axis) == 0 and not float(cells_per_axis).is_integer():
        raise ValueError(f"cells_per_axis must be integral, got {cells_per_axis}")
    mesh = CartesianMesh(extent, cells, Boundary(boundary), float(regularity))
    if any(mesh.h > mesh.regularity * w for w in mesh.widths):
        raise ValueError(
            f"mesh violates regularity h <= C h_i (h={mesh.h:.3g}, widths={mesh.widths}, "
            f"C={mesh.regularity})"
        )
    return mesh


def unit_torus(cells: int, dim: int = 2, **kwargs) -> CartesianMesh:
    """Periodic unit box with ``cells`` cells per axis."""
    return build_mesh(dim, 1.0, cells, Boundary.PERIODIC, **kwargs)


def tau(mesh: CartesianMesh, edge: EdgeId) -> float:
    mesh._check_edge(edge)
    return mesh.tau(edge.axis)


def locate_cell(mesh: CartesianMesh, x) -> tuple[int, ...]:
    """Index of the cell whose half-open box contains ``x``.

    Points on an interior face belong to the higher-index cell.  Periodic
    meshes wrap ``x`` first; no-flux meshes reject points outside the closed
    domain.
    """
    idx = mesh.locate(np.asarray(x, dtype=float).reshape(mesh.dim))
    return tuple(int(i) for i in idx)
