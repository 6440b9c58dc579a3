"""Velocity fields, per-edge averaged normal velocities and CFL audits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import special

from .mesh import CartesianMesh, EdgeId, Side

EdgeAverage = Callable[[float, int, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class VelocityField:
    """A velocity field ``u(t, x)`` with the metadata the scheme needs.

    ``func(t, x)`` takes points of shape ``(..., dim)`` and returns vectors of
    the same shape.  ``edge_average``, when given, returns the exact average of
    the normal component ``u . e_axis`` over axis-normal faces and replaces the
    quadrature; it is called as ``edge_average(t, axis, face_coord, lo, hi)``
    where ``lo``/``hi`` have shape ``(..., dim)`` and bound the face in the
    transverse directions.
    """

    func: Callable[[float, np.ndarray], np.ndarray]
    dim: int
    sup_bound: float
    divergence_free: bool = False
    boundary_compatible: bool = False
    stationary: bool = True
    edge_average: Optional[EdgeAverage] = None
    name: str = "custom"

    def __call__(self, t, x):
        return self.func(t, np.asarray(x, dtype=float))

    def negated(self) -> "VelocityField":
        """The field ``-u``; used to reverse the flow in time-reversal studies."""
        f, ea = self.func, self.edge_average
        neg_ea = None if ea is None else (lambda t, a, c, lo, hi: -ea(t, a, c, lo, hi))
        name = self.name[1:] if self.name.startswith("-") else "-" + self.name
        return replace(self, func=lambda t, x: -f(t, x), edge_average=neg_ea, name=name)


def builtin_constant(U) -> VelocityField:
    """Constant field ``u(t, x) = U``."""
    U = np.atleast_1d(np.asarray(U, dtype=float))
    if U.ndim != 1 or U.size not in (1, 2):
        raise ValueError(f"U must be a vector of length 1 or 2, got shape {U.shape}")

    def func(t, x):
        return np.broadcast_to(U, np.shape(x)).copy()

    def edge_average(t, axis, coord, lo, hi):
        return np.full(np.shape(coord), U[axis])

    return VelocityField(
        func, U.size, float(np.linalg.norm(U)), divergence_free=True,
        boundary_compatible=not np.any(U), edge_average=edge_average, name="constant",
    )


# integral of sin(theta)**(1/2) over [0, pi]
_HALF_PERIOD = float(special.beta(0.75, 0.5))


def _sqrt_sine_integral(theta):
    """``int_0^theta sin(s)**(1/2) ds`` for ``theta`` in ``[0, pi]``."""
    theta = np.asarray(theta, dtype=float)
    first = theta <= np.pi / 2
    t = np.where(first, theta, np.pi - theta)
    part = 0.5 * _HALF_PERIOD * special.betainc(0.75, 0.5, np.sin(t) ** 2)
    return np.where(first, part, _HALF_PERIOD - part)


def shear_profile(x2):
    """``v(x2) = sign(sin 2 pi x2) |sin 2 pi x2|**(1/2)``, 1-periodic."""
    s = np.sin(2 * np.pi * np.mod(x2, 1.0))
    return np.sign(s) * np.sqrt(np.abs(s))


def shear_antiderivative(y):
    """Periodic antiderivative ``V(y) = int_0^y v`` of :func:`shear_profile`."""
    y = np.mod(np.asarray(y, dtype=float), 1.0)
    upper = y >= 0.5
    yy = np.where(upper, y - 0.5, y)
    base = _sqrt_sine_integral(2 * np.pi * yy) / (2 * np.pi)
    return np.where(upper, _HALF_PERIOD / (2 * np.pi) - base, base)


def _shear_interval_average(lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    # V is 1-periodic (v has zero mean), so differences need no unwrapping
    return (shear_antiderivative(hi) - shear_antiderivative(lo)) / (hi - lo)


def builtin_sobolev_shear(speed: float = 0.5) -> VelocityField:
    """Hölder-1/2 shear field ``(v(x2), speed)`` on the periodic unit square."""

    def func(t, x):
        out = np.empty(np.shape(x))
        out[..., 0] = shear_profile(x[..., 1])
        out[..., 1] = speed
        return out

    def edge_average(t, axis, coord, lo, hi):
        if axis == 1:
            return np.full(np.shape(coord), speed)
        return _shear_interval_average(lo[..., 1], hi[..., 1])

    return VelocityField(
        func, 2, math.hypot(1.0, speed), divergence_free=True, boundary_compatible=False,
        edge_average=edge_average, name="sobolev",
    )


BUILTIN_FIELDS = {"constant": lambda: builtin_constant((0.0, 1.0)), "sobolev": builtin_sobolev_shear}


@dataclass(frozen=True)
class Quadrature:
    """Gauss-Legendre edge quadrature and time-averaging rule."""

    points: int = 4
    segments: int = 1
    time_rule: str = "midpoint"

    def __post_init__(self):
        if self.points < 1 or self.segments < 1:
            raise ValueError("quadrature order must be >= 1")
        if self.time_rule not in ("midpoint", "gauss2"):
            raise ValueError(f"unknown time rule {self.time_rule!r}")

    def nodes(self):
        """Composite nodes and weights on ``[0, 1]`` (weights sum to 1)."""
        x, w = np.polynomial.legendre.leggauss(self.points)
        x = (x + 1) / 2
        w = w / 2
        k = np.arange(self.segments)[:, None]
        nodes = ((k + x[None, :]) / self.segments).ravel()
        weights = np.tile(w / self.segments, self.segments)
        return nodes, weights

    def times(self, t_n, dt, stationary):
        if stationary:
            return np.array([t_n]), np.array([1.0])
        if self.time_rule == "midpoint":
            return np.array([t_n + dt / 2]), np.array([1.0])
        g = 0.5 / math.sqrt(3.0)
        return np.array([t_n + (0.5 - g) * dt, t_n + (0.5 + g) * dt]), np.array([0.5, 0.5])


@dataclass
class EdgeFluxSet:
    """Time-averaged normal velocities, one value per physical face.

    ``normal[a]`` has shape ``mesh.face_shape(a)``; entry ``j`` along axis ``a``
    is the average of ``u . e_a`` over the low face of cell ``j``.  Boundary
    faces of a no-flux mesh are stored but take no part in the scheme.
    """

    mesh: CartesianMesh
    n: int
    normal: tuple[np.ndarray, ...]
    sup_bound: float = math.inf

    def value(self, edge: EdgeId) -> float:
        """``u_KL^n`` seen from ``edge.cell`` (outward normal convention)."""
        v = float(self.normal[edge.axis][self.mesh.face_index(edge)])
        return v if edge.side is Side.HIGH else -v

    def positive(self, edge: EdgeId) -> float:
        return max(self.value(edge), 0.0)

    def negative(self, edge: EdgeId) -> float:
        return max(-self.value(edge), 0.0)

    def interior(self, axis: int) -> np.ndarray:
        """Face values with no-flux boundary faces set to zero."""
        w = self.normal[axis]
        if self.mesh.periodic:
            return w
        w = w.copy()
        sl = [slice(None)] * w.ndim
        sl[axis] = 0
        w[tuple(sl)] = 0.0
        sl[axis] = -1
        w[tuple(sl)] = 0.0
        return w

    def boundary_values(self) -> np.ndarray:
        if self.mesh.periodic:
            return np.zeros(0)
        vals = []
        for a, w in enumerate(self.normal):
            vals.append(np.take(w, [0, -1], axis=a).ravel())
        return np.concatenate(vals)

    def outflow_sum(self) -> np.ndarray:
        """``sum_L (u_KL^+ - u_KL^-) tau_KL`` per cell, i.e. the discrete divergence."""
        out = np.zeros(self.mesh.shape)
        for a in range(self.mesh.dim):
            w = self.interior(a)
            high, low = _high_low(w, a, self.mesh)
            out += (high - low) * self.mesh.tau(a)
        return out


def _high_low(w, axis, mesh):
    """Per-cell views of face data at the high and low face along ``axis``."""
    if mesh.periodic:
        return np.roll(w, -1, axis=axis), w
    n = mesh.shape[axis]
    return np.take(w, np.arange(1, n + 1), axis=axis), np.take(w, np.arange(n), axis=axis)


def _face_geometry(mesh: CartesianMesh, axis: int):
    """Face coordinate and transverse bounds for every stored face normal to ``axis``."""
    fshape = mesh.face_shape(axis)
    idx = np.indices(fshape)
    widths = np.asarray(mesh.widths)
    lo = np.moveaxis(idx, 0, -1) * widths
    hi = lo + widths
    coord = lo[..., axis].copy()
    return coord, lo, hi


def assemble_fluxes(field: VelocityField, mesh: CartesianMesh, t_n: float, dt: float,
                    quadrature: Quadrature | None = None, n: int = 0) -> EdgeFluxSet:
    """Compute ``u_KL^n`` on every face of ``mesh`` for the step ``[t_n, t_n + dt]``."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if field.dim != mesh.dim:
        raise ValueError(f"field is {field.dim}-d but mesh is {mesh.dim}-d")
    quad = quadrature or Quadrature()
    times, tweights = quad.times(t_n, dt, field.stationary)
    normal = []
    for a in range(mesh.dim):
        coord, lo, hi = _face_geometry(mesh, a)
        acc = np.zeros(coord.shape)
        for t, tw in zip(times, tweights):
            if field.edge_average is not None:
                acc += tw * field.edge_average(t, a, coord, lo, hi)
            else:
                acc += tw * _quadrature_average(field, t, a, coord, lo, hi, quad)
        if not mesh.periodic and field.boundary_compatible:
            # u . nu = 0 on the boundary holds by declaration
            sl = [slice(None)] * mesh.dim
            sl[a] = 0
            acc[tuple(sl)] = 0.0
            sl[a] = -1
            acc[tuple(sl)] = 0.0
        normal.append(acc)
    return EdgeFluxSet(mesh, n, tuple(normal), field.sup_bound)


def _quadrature_average(field, t, axis, coord, lo, hi, quad):
    dim = lo.shape[-1]
    if dim == 1:
        x = np.zeros(coord.shape + (1,))
        x[..., 0] = coord
        return field(t, x)[..., axis]
    nodes, weights = quad.nodes()
    other = 1 - axis
    x = np.empty(coord.shape + (nodes.size, 2))
    x[..., axis] = coord[..., None]
    x[..., other] = lo[..., other, None] + nodes * (hi[..., other, None] - lo[..., other, None])
    return field(t, x)[..., axis] @ weights


def edge_flux(field: VelocityField, mesh: CartesianMesh, edge: EdgeId, t_n: float, dt: float,
              quadrature: Quadrature | None = None) -> float:
    """Averaged ``u . nu_KL`` over one face and one time step."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    quad = quadrature or Quadrature()
    mesh._check_edge(edge)
    coord_all, lo_all, hi_all = _face_geometry(mesh, edge.axis)
    fi = mesh.face_index(edge)
    coord = np.asarray(coord_all[fi])[None]
    lo = lo_all[fi][None]
    hi = hi_all[fi][None]
    times, tweights = quad.times(t_n, dt, field.stationary)
    val = 0.0
    for t, tw in zip(times, tweights):
        if field.edge_average is not None:
            val += tw * float(field.edge_average(t, edge.axis, coord, lo, hi)[0])
        else:
            val += tw * float(_quadrature_average(field, t, edge.axis, coord, lo, hi, quad)[0])
    if not mesh.periodic and field.boundary_compatible and mesh.is_boundary(edge):
        return 0.0
    return val if edge.side is Side.HIGH else -val


@dataclass
class CflReport:
    """Outcome of :func:`cfl_audit`."""

    per_cell: np.ndarray
    max_outflow: float
    worst_cell: tuple[int, ...]
    mesh_ratio: float
    constant: float
    ok: bool = field(init=False)
    true_ok: bool = field(init=False)

    def __post_init__(self):
        self.ok = bool(self.max_outflow <= 1.0 + 1e-12)
        self.true_ok = bool(self.mesh_ratio <= self.constant * (1.0 + 1e-12))

    def __str__(self):
        status = "ok" if self.ok else "VIOLATED"
        return (
            f"CFL {status}: max_K dt*sum tau u+ = {self.max_outflow:.6g} at cell {self.worst_cell}; "
            f"dt*u_inf/h = {self.mesh_ratio:.6g} (C = {self.constant:g})"
        )


def outflow_probability(fluxes: EdgeFluxSet, dt: float) -> np.ndarray:
    """``dt * sum_{L~K} tau_KL u_KL^+`` per cell."""
    mesh = fluxes.mesh
    total = np.zeros(mesh.shape)
    for a in range(mesh.dim):
        high, low = _high_low(fluxes.interior(a), a, mesh)
        total += dt * mesh.tau(a) * (np.maximum(high, 0.0) + np.maximum(-low, 0.0))
    return total


def cfl_audit(fluxes: EdgeFluxSet, mesh: CartesianMesh, dt: float, constant: float = 1.0) -> CflReport:
    """Check the per-cell outflow CFL condition and the mesh-independent one."""
    per_cell = outflow_probability(fluxes, dt)
    flat = int(np.argmax(per_cell))
    worst = tuple(int(i) for i in np.unravel_index(flat, mesh.shape))
    return CflReport(per_cell, float(per_cell.ravel()[flat]), worst,
                     dt * fluxes.sup_bound / mesh.h, constant)


def net_flow(fluxes: EdgeFluxSet, mesh: CartesianMesh, cell=None, dt: float | None = None,
             atol: float = 1e-12) -> np.ndarray:
    """Cell-constant net flow ``u_K^n = sum_{L~K} nu_KL u_KL^+``.

    Returns the vector for ``cell`` or, when ``cell`` is None, an array of shape
    ``mesh.shape + (dim,)``.  When ``dt`` is given the centroid form
    ``sum_L p_KL (x_L - x_K) / dt`` is evaluated too and must agree within
    ``atol`` (scaled by the field magnitude).
    """
    out = np.empty(mesh.shape + (mesh.dim,))
    for a in range(mesh.dim):
        high, low = _high_low(fluxes.interior(a), a, mesh)
        out[..., a] = np.maximum(high, 0.0) - np.maximum(-low, 0.0)
    if dt is not None:
        centroid = np.empty_like(out)
        for a in range(mesh.dim):
            high, low = _high_low(fluxes.interior(a), a, mesh)
            p_high = dt * mesh.tau(a) * np.maximum(high, 0.0)
            p_low = dt * mesh.tau(a) * np.maximum(-low, 0.0)
            h_a = mesh.widths[a]
            centroid[..., a] = (p_high * h_a - p_low * h_a) / dt
        scale = max(1.0, float(np.max(np.abs(out), initial=0.0)))
        err = float(np.max(np.abs(centroid - out), initial=0.0))
        if err > atol * scale:
            raise AssertionError(f"edge and centroid forms of the net flow differ by {err:.3g}")
    if cell is None:
        return out
    return out[tuple(cell)].copy()
