"""Error measures between cell fields."""

from __future__ import annotations

import numpy as np

from .scheme import CellField
from .transport import DiscreteMeasure, TransportError, kr_distance, wasserstein1


def _check_same_mesh(a: CellField, b: CellField):
    if not a.mesh.same_as(b.mesh):
        raise ValueError("fields live on different meshes")


def l_norm_error(a: CellField, b: CellField, q=1) -> float:
    """``(sum_K |K| |a_K - b_K|^q)^(1/q)``; ``q = inf`` gives the max norm."""
    _check_same_mesh(a, b)
    d = np.abs(a.values - b.values)
    if q == np.inf or q == "inf":
        return float(d.max())
    q = float(q)
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    return float((np.sum(d ** q) * a.mesh.cell_volume) ** (1.0 / q))


def _mode_indices(n):
    """Integer wavenumbers with ``|m| <= n/2`` and their DFT slots."""
    half = n // 2
    m = np.arange(-half, half + 1)
    return m, np.mod(m, n)


def hminus1_norm(diff: CellField, mean_rtol: float = 1e-9) -> float:
    """Homogeneous ``H^-1`` norm of a piecewise-constant field on a periodic box.

    Uses the exact Fourier transform of the piecewise-constant function (DFT
    of the cell values times ``h_i sinc(k_i h_i / 2)`` per axis) on all modes
    with ``|k_i| <= pi / h_i``, excluding ``k = 0``.
    """
    mesh = diff.mesh
    if not mesh.periodic:
        raise ValueError("the spectral H^-1 norm needs a periodic mesh")
    vals = diff.values
    l1 = np.sum(np.abs(vals)) * mesh.cell_volume
    mean = vals.sum() * mesh.cell_volume
    if abs(mean) > mean_rtol * max(l1, 1e-300):
        raise ValueError(f"field has non-negligible mean {mean:.3e} (L1 norm {l1:.3e})")
    C = np.fft.fftn(vals)
    axes_k, axes_slot, factors = [], [], []
    for n, L, h in zip(mesh.shape, mesh.extent, mesh.widths):
        m, slot = _mode_indices(n)
        k = 2 * np.pi * m / L
        axes_k.append(k)
        axes_slot.append(slot)
        factors.append(h * np.abs(np.sinc(k * h / (2 * np.pi))))
    grid_k = np.meshgrid(*axes_k, indexing="ij")
    k2 = sum(g ** 2 for g in grid_k)
    coef = np.abs(C[np.ix_(*axes_slot)])
    for a, f in enumerate(factors):
        shape = [1] * mesh.dim
        shape[a] = f.size
        coef = coef * f.reshape(shape)
    k2 = np.where(k2 == 0, np.inf, k2)
    return float(np.sqrt(np.sum(coef ** 2 / k2) / mesh.volume))


def w1_1d(mu: DiscreteMeasure, nu: DiscreteMeasure, mass_rtol: float = 1e-9) -> float:
    """Exact ``W_1`` of two measures on the line, ``int |F_mu - F_nu|``."""
    if mu.dim != 1 or nu.dim != 1:
        raise ValueError("w1_1d needs one-dimensional supports")
    tm, tn = mu.total, nu.total
    if abs(tm - tn) > mass_rtol * max(tm, tn, 1e-300):
        raise TransportError(f"measures have different mass ({tm!r} vs {tn!r})")
    x = np.concatenate([mu.points[:, 0], nu.points[:, 0]])
    w = np.concatenate([mu.masses, -nu.masses])
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    F = np.cumsum(w)[:-1]
    return float(np.sum(np.abs(F) * np.diff(x)))


def w1_fields_1d(a: CellField, b: CellField) -> float:
    """``W_1`` between two nonnegative 1-D cell fields collapsed to cell centroids."""
    _check_same_mesh(a, b)
    if a.mesh.dim != 1:
        raise ValueError("w1_fields_1d needs a 1-D mesh")
    # same support: W1 = h * sum |cumulative mass difference|
    d = (a.values - b.values) * a.mesh.cell_volume
    return float(a.mesh.widths[0] * np.sum(np.abs(np.cumsum(d)[:-1])))


def field_difference_measures(a: CellField, b: CellField):
    """``(a - b)^+`` and ``(a - b)^-`` as measures at cell centroids."""
    _check_same_mesh(a, b)
    diff = a.with_values(a.values - b.values)
    return DiscreteMeasure.from_field(diff, "+"), DiscreteMeasure.from_field(diff, "-")


def kr_fields(a: CellField, b: CellField, r: float, **kwargs) -> float:
    """``D_r`` between two cell fields of equal mass (centroid collapse).

    Periodic meshes are treated with the Euclidean metric of the unit box,
    not the torus metric.
    """
    pos, neg = field_difference_measures(a, b)
    kwargs.setdefault("rescale", True)
    return kr_distance(pos, neg, r, **kwargs)[0]


def w1_fields(a: CellField, b: CellField, **kwargs) -> float:
    """``W_1`` between two cell fields of equal mass, any dimension (exact LP)."""
    if a.mesh.dim == 1:
        return w1_fields_1d(a, b)
    pos, neg = field_difference_measures(a, b)
    kwargs.setdefault("rescale", True)
    return wasserstein1(pos, neg, **kwargs)
