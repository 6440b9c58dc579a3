"""Explicit upwind finite volume scheme.

The production update is the flux form: every face moves
``q+ rho_low - q- rho_high`` across itself, where ``q+-`` are the jump
probabilities stored once per face.  The probability form
``|K| rho_K^{n+1} = sum_L |L| rho_L^n p_LK^n`` is kept as
:func:`step_probability_form` for cross-checking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from ._kernels import flux_step
from .mesh import CartesianMesh
from .velocity import (EdgeFluxSet, Quadrature, VelocityField, _high_low, assemble_fluxes,
                       cfl_audit)

logger = logging.getLogger(__name__)


class CFLViolation(ValueError):
    """Raised when the outflow CFL condition fails for some cell."""

    def __init__(self, report):
        super().__init__(str(report))
        self.report = report


@dataclass
class CellField:
    """One scalar per cell of ``mesh`` at time step ``n``."""

    mesh: CartesianMesh
    values: np.ndarray
    n: int = 0
    t: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.mesh.shape:
            if self.values.size == self.mesh.num_cells:
                self.values = self.values.reshape(self.mesh.shape)
            else:
                raise ValueError(f"expected {self.mesh.shape} values, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("cell values must be finite")

    def mass(self) -> float:
        return float(self.values.sum() * self.mesh.cell_volume)

    def lq_norm(self, q=1) -> float:
        if q == np.inf:
            return float(np.max(np.abs(self.values)))
        return float((np.sum(np.abs(self.values) ** q) * self.mesh.cell_volume) ** (1.0 / q))

    def copy(self) -> "CellField":
        return CellField(self.mesh, self.values.copy(), self.n, self.t)

    def with_values(self, values, n=None, t=None) -> "CellField":
        return CellField(self.mesh, values, self.n if n is None else n, self.t if t is None else t)

    def __neg__(self):
        return self.with_values(-self.values)


def _gauss_points(mesh: CartesianMesh, points: int):
    x, w = np.polynomial.legendre.leggauss(points)
    x = (x + 1) / 2
    w = w / 2
    axes, weights = [], []
    for a, (n, h) in enumerate(zip(mesh.shape, mesh.widths)):
        axes.append(((np.arange(n)[:, None] + x[None, :]) * h))
        weights.append(w)
    return axes, weights


def discretize_initial(rho0, mesh: CartesianMesh, quadrature_points: int = 4) -> CellField:
    """Cell averages of ``rho0``.

    ``rho0`` may be per-cell data (array of ``mesh.shape``), an object exposing
    ``cell_averages(mesh)`` (closed-form averages), or a vectorized callable
    ``rho0(x)`` on points of shape ``(..., dim)`` integrated with a tensor
    Gauss-Legendre rule of ``quadrature_points`` per axis.
    """
    if isinstance(rho0, CellField):
        if not rho0.mesh.same_as(mesh):
            raise ValueError("initial field lives on a different mesh")
        return rho0.copy()
    if hasattr(rho0, "cell_averages"):
        return CellField(mesh, rho0.cell_averages(mesh))
    if not callable(rho0):
        return CellField(mesh, np.asarray(rho0, dtype=float))
    if quadrature_points < 1:
        raise ValueError("quadrature order must be >= 1")
    axes, weights = _gauss_points(mesh, quadrature_points)
    if mesh.dim == 1:
        vals = np.asarray(rho0(axes[0][..., None]), dtype=float)
        avg = vals @ weights[0]
    else:
        x1 = axes[0][:, None, :, None]
        x2 = axes[1][None, :, None, :]
        pts = np.stack(np.broadcast_arrays(x1, x2), axis=-1)
        vals = np.asarray(rho0(pts), dtype=float)
        avg = np.einsum("ijkl,k,l->ij", vals, weights[0], weights[1])
    if not np.all(np.isfinite(avg)):
        raise ValueError("initial datum produced non-finite values")
    return CellField(mesh, avg)


@dataclass
class TransitionTable:
    """Jump probabilities of one time step, stored once per face.

    ``forward[a]`` holds ``dt tau u+`` (probability of jumping from the low to
    the high cell across each face normal to axis ``a``) and ``backward[a]``
    holds ``dt tau u-`` (high to low).  Per-cell views are derived on demand.
    """

    mesh: CartesianMesh
    n: int
    dt: float
    forward: tuple[np.ndarray, ...]
    backward: tuple[np.ndarray, ...]

    def to_high(self, axis: int) -> np.ndarray:
        """``p_KL`` for ``L`` the high neighbor of each cell along ``axis``."""
        return _high_low(self.forward[axis], axis, self.mesh)[0]

    def to_low(self, axis: int) -> np.ndarray:
        return _high_low(self.backward[axis], axis, self.mesh)[1]

    def leave(self) -> np.ndarray:
        """``sum_{L~K} p_KL`` per cell."""
        total = np.zeros(self.mesh.shape)
        for a in range(self.mesh.dim):
            total += self.to_high(a) + self.to_low(a)
        return total

    def stay(self) -> np.ndarray:
        """``p_KK = 1 - sum_{L~K} p_KL``."""
        return 1.0 - self.leave()

    def row(self, cell) -> dict:
        """Transition row of one cell as ``{target cell: probability}``."""
        cell = tuple(cell)
        out = {cell: float(self.stay()[cell])}
        for a in range(self.mesh.dim):
            for prob, step in ((self.to_high(a)[cell], 1), (self.to_low(a)[cell], -1)):
                target = list(cell)
                target[a] += step
                if self.mesh.periodic:
                    target[a] %= self.mesh.shape[a]
                elif not 0 <= target[a] < self.mesh.shape[a]:
                    continue
                out[tuple(target)] = out.get(tuple(target), 0.0) + float(prob)
        return out

    def dense(self) -> np.ndarray:
        """Full ``num_cells x num_cells`` matrix ``P[K, L] = p_KL`` (small meshes only)."""
        mesh = self.mesh
        P = np.zeros((mesh.num_cells, mesh.num_cells))
        for cell in mesh.cells():
            i = mesh.flat_index(np.array(cell))
            for target, p in self.row(cell).items():
                P[i, mesh.flat_index(np.array(target))] += p
        return P

    @property
    def is_identity(self) -> bool:
        return all(not f.any() for f in self.forward) and all(not b.any() for b in self.backward)


def assemble_transitions(fluxes: EdgeFluxSet, mesh: CartesianMesh, dt: float) -> TransitionTable:
    """Build ``p_KL^n = dt tau_KL u_KL^{n+}``; refuses if the CFL condition fails."""
    report = cfl_audit(fluxes, mesh, dt)
    if not report.ok:
        raise CFLViolation(report)
    forward, backward = [], []
    for a in range(mesh.dim):
        w = fluxes.interior(a)
        c = dt * mesh.tau(a)
        forward.append(c * np.maximum(w, 0.0))
        backward.append(c * np.maximum(-w, 0.0))
    return TransitionTable(mesh, fluxes.n, dt, tuple(forward), tuple(backward))


def step(field: CellField, transitions: TransitionTable) -> CellField:
    """Advance ``field`` by one time step (flux form)."""
    mesh = field.mesh
    if not mesh.same_as(transitions.mesh):
        raise ValueError("transitions were assembled on a different mesh")
    rho = np.ascontiguousarray(field.values)
    new = flux_step(rho, transitions.forward, transitions.backward, mesh.periodic)
    return CellField(mesh, new, field.n + 1, field.t + transitions.dt)


def step_probability_form(field: CellField, transitions: TransitionTable) -> CellField:
    """Same update computed as ``|K| rho_K' = sum_L |L| rho_L p_LK`` (uniform cells)."""
    mesh = field.mesh
    rho = field.values
    new = transitions.stay() * rho
    for a in range(mesh.dim):
        up = transitions.to_high(a) * rho
        down = transitions.to_low(a) * rho
        if mesh.periodic:
            new += np.roll(up, 1, axis=a) + np.roll(down, -1, axis=a)
        else:
            n = mesh.shape[a]
            src = [slice(None)] * mesh.dim
            dst = [slice(None)] * mesh.dim
            src[a], dst[a] = slice(0, n - 1), slice(1, n)
            new[tuple(dst)] += up[tuple(src)]
            new[tuple(src)] += down[tuple(dst)]
    return CellField(mesh, new, field.n + 1, field.t + transitions.dt)


def num_steps(T: float, dt: float, what: str = "T") -> int:
    """``T / dt`` as an integer; raises unless ``T`` is a multiple of ``dt``."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    ratio = T / dt
    N = int(round(ratio))
    if N < 0 or abs(ratio - N) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"{what}={T!r} is not a nonnegative multiple of dt={dt!r}")
    return N


def run(rho0, field: VelocityField, mesh: CartesianMesh, dt: float, T: float,
        hooks: Iterable[Callable[[CellField], None]] = (), quadrature: Quadrature | None = None,
        keep: str = "all", t0: float = 0.0) -> list[CellField]:
    """Run the scheme from ``t0`` to ``t0 + T``.

    Parameters
    ----------
    rho0 : CellField, array or callable
        Initial datum, discretized with :func:`discretize_initial` if needed.
    hooks : iterable of callables
        Each is called with every field ``rho_h^n``, ``n = 0..N``.
    keep : {"all", "final"}
        Whether to return the whole trajectory or only the last field.
    """
    if keep not in ("all", "final"):
        raise ValueError(f"keep must be 'all' or 'final', got {keep!r}")
    N = num_steps(T, dt)
    current = discretize_initial(rho0, mesh)
    current = current.with_values(current.values, n=current.n, t=t0 if current.n == 0 else current.t)
    hooks = list(hooks)
    for hook in hooks:
        hook(current)
    out = [current]
    transitions = None
    for k in range(N):
        if transitions is None or not field.stationary:
            fluxes = assemble_fluxes(field, mesh, current.t, dt, quadrature, n=current.n)
            transitions = assemble_transitions(fluxes, mesh, dt)
        current = step(current, transitions)
        for hook in hooks:
            hook(current)
        if keep == "all":
            out.append(current)
    if keep == "final":
        return [current]
    return out


def binomial_closed_form(rho0: np.ndarray, n: int, periodic: bool = True) -> np.ndarray:
    """``rho_k^n = 2^-n sum_m C(n, m) rho_{k-m}^0`` for the 1-D scheme with ``dt U = h/2``.

    Binomial weights come from the multiplicative recurrence for small ``n``
    and from ``scipy.stats.binom`` beyond the range where ``2^-n`` is
    representable.  A periodic grid wraps indices; otherwise data left of the
    grid is zero.
    """
    rho0 = np.asarray(rho0, dtype=float)
    if n <= 1000:
        w = np.empty(n + 1)
        w[0] = 0.5 ** n
        for m in range(n):
            w[m + 1] = w[m] * (n - m) / (m + 1)
    else:
        from scipy.stats import binom

        w = binom.pmf(np.arange(n + 1), n, 0.5)
    size = rho0.size
    if periodic:
        folded = np.bincount(np.arange(n + 1) % size, weights=w, minlength=size)
        out = np.zeros(size)
        for m in np.flatnonzero(folded):
            out += folded[m] * np.roll(rho0, m)
        return out
    return np.convolve(rho0, w)[:size]
