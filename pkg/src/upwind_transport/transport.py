"""Exact discrete optimal transport with metric costs.

The transport problem between finitely supported measures is solved by the
network simplex of POT, and every optimum is certified from the dual side:
the LP potentials are turned into a function ``psi`` on the joint support
that is 1-Lipschitz for the cost metric, and ``int psi d(mu - nu)`` must
match the primal cost.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

DEFAULT_SIZE_CAP = 5000


class TransportError(ValueError):
    pass


class SizeCapExceeded(TransportError):
    pass


@dataclass
class DiscreteMeasure:
    """Nonnegative point masses."""

    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        self.points = pts
        self.masses = np.asarray(self.masses, dtype=float).ravel()
        if self.points.shape[0] != self.masses.size:
            raise ValueError("points and masses differ in length")
        if np.any(self.masses < 0) or not np.all(np.isfinite(self.masses)):
            raise ValueError("masses must be finite and nonnegative")

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.masses.size

    def compressed(self) -> "DiscreteMeasure":
        """Drop zero masses and merge coincident points."""
        keep = self.masses > 0
        if not np.any(keep):
            return DiscreteMeasure(np.zeros((0, self.dim)), np.zeros(0))
        pts, inv = np.unique(self.points[keep], axis=0, return_inverse=True)
        return DiscreteMeasure(pts, np.bincount(inv.ravel(), weights=self.masses[keep]))

    @classmethod
    def from_field(cls, field, part: str | None = None) -> "DiscreteMeasure":
        """Masses ``|K| rho_K`` at cell centroids; ``part`` selects ``'+'`` or ``'-'``."""
        vals = field.values.ravel()
        if part == "+":
            vals = np.maximum(vals, 0.0)
        elif part == "-":
            vals = np.maximum(-vals, 0.0)
        elif part is not None:
            raise ValueError(f"part must be None, '+' or '-', got {part!r}")
        pts = field.mesh.centroids().reshape(-1, field.mesh.dim)
        return cls(pts, vals * field.mesh.cell_volume)


@dataclass
class TransportPlan:
    """Sparse coupling ``(source, target, mass)`` and its total cost."""

    sources: np.ndarray
    targets: np.ndarray
    mass: np.ndarray
    cost: float
    source_points: np.ndarray
    target_points: np.ndarray
    lower_bound: float = math.nan
    potential: np.ndarray | None = field(default=None, repr=False)

    @property
    def gap(self) -> float:
        return self.cost - self.lower_bound

    def marginals(self, n_sources: int, n_targets: int):
        a = np.bincount(self.sources, weights=self.mass, minlength=n_sources)
        b = np.bincount(self.targets, weights=self.mass, minlength=n_targets)
        return a, b


def euclidean(x, y):
    return cdist(x, y)


def log_cost(r: float) -> Callable:
    """Metric ``log(|x - y| / r + 1)``."""
    if r <= 0:
        raise ValueError(f"r must be positive, got {r}")
    return lambda x, y: np.log1p(cdist(x, y) / r)


def _balance(mu, nu, mass_rtol, rescale):
    tm, tn = mu.total, nu.total
    scale = max(tm, tn, 1e-300)
    if abs(tm - tn) > mass_rtol * scale and not rescale:
        raise TransportError(f"measures have different mass ({tm!r} vs {tn!r})")
    if tn > 0 and tm != tn:
        nu = DiscreteMeasure(nu.points, nu.masses * (tm / tn))
    return mu, nu


def _empty_plan(mu, nu):
    z = np.zeros(0, dtype=np.intp)
    return TransportPlan(z, z, np.zeros(0), 0.0, mu.points, nu.points, 0.0)


def _chunked(fn, x, y, reduce, chunk=2048):
    out = []
    for i in range(0, x.shape[0], chunk):
        out.append(reduce(fn(x[i:i + chunk], y)))
    return np.concatenate(out) if out else np.zeros(0)


def solve_transport(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: Callable = euclidean,
                    *, certify: bool = True, mass_rtol: float = 1e-9, rescale: bool = False,
                    size_cap: int = DEFAULT_SIZE_CAP, gap_rtol: float = 1e-8) -> TransportPlan:
    """Optimal coupling of ``mu`` and ``nu`` for a metric ``cost(x_block, y_block)``.

    ``cost`` must be a metric for the dual certificate to be meaningful; the
    certificate is skipped with ``certify=False``.
    """
    mu, nu = _balance(mu, nu, mass_rtol, rescale)
    mu, nu = mu.compressed(), nu.compressed()
    m, n = len(mu), len(nu)
    if m == 0 or n == 0:
        return _empty_plan(mu, nu)
    if max(m, n) > size_cap:
        raise SizeCapExceeded(
            f"{m} x {n} support points exceed the size cap {size_cap}; "
            "use coupling_upper_bound for an upper bound instead"
        )
    total = mu.total
    a = mu.masses / total
    b = nu.masses / total
    C = cost(mu.points, nu.points)
    if m == 1 or n == 1:
        # a single source or sink admits exactly one coupling
        pi = np.outer(a, b)
        # sink potentials making the source potential vanish (m == 1) or zero (n == 1)
        g = C[0].copy() if m == 1 else np.zeros(n)
    else:
        emd = _network_simplex()
        pi, log = emd(a, b / b.sum() * a.sum(), C, numItermax=max(100_000, 50 * m * n), log=True)
        if log.get("result_code", 1) != 1:
            raise TransportError(f"network simplex did not reach optimality: {log.get('warning')}")
        pi = np.maximum(np.asarray(pi, dtype=float), 0.0)
        g = np.asarray(log["v"], dtype=float)
    # restore exact marginals lost to solver tolerance on the largest entries
    pi = _repair(pi, a, b)
    si, ti = np.nonzero(pi > 0)
    mass = pi[si, ti] * total
    primal = float(np.sum(pi * C) * total)
    plan = TransportPlan(si, ti, mass, primal, mu.points, nu.points)
    if certify:
        _certify(plan, mu, nu, C, g, cost, gap_rtol, total)
    return plan


def _network_simplex():
    # POT probes every installed array backend on import; only numpy is needed
    for name in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
    from ot.lp import emd

    return emd


def _repair(pi, a, b):
    for _ in range(2):
        ra = a - pi.sum(axis=1)
        i = np.arange(pi.shape[0])
        j = np.argmax(pi, axis=1)
        pi[i, j] = np.maximum(pi[i, j] + ra, 0.0)
        rb = b - pi.sum(axis=0)
        j = np.arange(pi.shape[1])
        i = np.argmax(pi, axis=0)
        pi[i, j] = np.maximum(pi[i, j] + rb, 0.0)
    return pi


def _certify(plan, mu, nu, C, g, cost, gap_rtol, total):
    """Build a 1-Lipschitz potential from sink duals and check the duality gap."""
    # psi(z) = min_j cost(z, y_j) - g_j is 1-Lipschitz for any metric cost
    psi_src = np.min(C - g[None, :], axis=1)
    psi_snk = _chunked(lambda y, yy: cost(y, yy) - g[None, :], nu.points, nu.points,
                       lambda blk: blk.min(axis=1))
    lower = float((mu.masses @ psi_src - nu.masses @ psi_snk))
    plan.lower_bound = lower
    plan.potential = np.concatenate([psi_src, psi_snk])
    pts = np.concatenate([mu.points, nu.points])
    _check_lipschitz(plan.potential, pts, cost)
    scale = 1.0 + abs(plan.cost)
    if plan.cost - lower > gap_rtol * scale or lower - plan.cost > gap_rtol * scale:
        raise TransportError(
            f"duality gap {plan.cost - lower:.3e} exceeds tolerance (primal {plan.cost:.12g})"
        )


def _check_lipschitz(psi, pts, cost, chunk=1024, atol=1e-11):
    for i in range(0, pts.shape[0], chunk):
        blk = cost(pts[i:i + chunk], pts)
        diff = psi[i:i + chunk, None] - psi[None, :]
        excess = float(np.max(diff - blk))
        if excess > atol * (1.0 + float(np.max(np.abs(psi)))):
            raise TransportError(f"dual potential violates the Lipschitz bound by {excess:.3e}")


def transshipment(mu: DiscreteMeasure, nu: DiscreteMeasure):
    """``((mu - nu)^+, (mu - nu)^-)`` on the union of the supports."""
    pts = np.concatenate([mu.points, nu.points])
    w = np.concatenate([mu.masses, -nu.masses])
    if pts.shape[0] == 0:
        empty = DiscreteMeasure(np.zeros((0, mu.dim)), np.zeros(0))
        return empty, empty
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    net = np.bincount(inv.ravel(), weights=w, minlength=uniq.shape[0])
    pos, neg = net > 0, net < 0
    return DiscreteMeasure(uniq[pos], net[pos]), DiscreteMeasure(uniq[neg], -net[neg])


def kr_distance(mu: DiscreteMeasure, nu: DiscreteMeasure, r: float, *, reduce: bool = True,
                **kwargs) -> tuple[float, TransportPlan]:
    """Kantorovich-Rubinstein distance with cost ``log(|x - y| / r + 1)``.

    Common mass is cancelled first (``reduce=True``); the distance only
    depends on ``mu - nu`` because the cost is a metric.  Keyword arguments go
    to :func:`solve_transport`.
    """
    cost = log_cost(r)
    mass_rtol = kwargs.get("mass_rtol", 1e-9)
    if not kwargs.get("rescale", False):
        _balance(mu, nu, mass_rtol, False)
    if reduce:
        mu, nu = transshipment(mu, nu)
        kwargs.setdefault("mass_rtol", 1e-9)
        # cancellation leaves equal masses up to round-off in the common part
        kwargs["rescale"] = True
    plan = solve_transport(mu, nu, cost, **kwargs)
    return plan.cost, plan


def wasserstein1(mu: DiscreteMeasure, nu: DiscreteMeasure, **kwargs) -> float:
    """W1 with Euclidean cost via the exact LP (any dimension)."""
    return solve_transport(mu, nu, euclidean, **kwargs).cost


def coupling_upper_bound(x, y, w=None, r: float = 1.0, normalize: bool = False) -> float:
    """``sum_i w_i log(|x_i - y_i| / r + 1)``, an upper bound on ``D_r`` of the marginals.

    ``x`` and ``y`` are paired points of shape ``(n,)`` or ``(n, d)``; weights
    default to 1.  With ``normalize`` the weights are scaled to sum to one.
    """
    if r <= 0:
        raise ValueError(f"r must be positive, got {r}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x, y = x[:, None], y[:, None]
    if x.shape != y.shape:
        raise ValueError("paired samples must have matching shapes")
    w = np.ones(x.shape[0]) if w is None else np.asarray(w, dtype=float)
    if normalize:
        w = w / w.sum()
    dist = np.linalg.norm(x - y, axis=1)
    return float(w @ np.log1p(dist / r))
