"""Stochastic characteristics of the upwind scheme.

Read as a Markov chain, one step of the scheme moves a particle located in
cell ``K`` as follows: with probability ``p_KK`` it stays where it is, and
with probability ``p_KL`` it is redrawn uniformly inside the neighbor ``L``.
If the particles start distributed according to the discrete initial
density, their law at step ``n`` is exactly ``rho_h^n``.  The increments
``xi^n = psi^{n+1} - psi^n - dt u_h^n(psi^n)`` form martingale differences
bounded by ``4h``.

Positions are kept *lifted* on periodic meshes (never wrapped), so that
increments and martingale sums are true displacements; cells are found by
wrapping only when the transition table is looked up.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np
from scipy import stats

from .mesh import CartesianMesh
from .rng import PURPOSE_INIT, PURPOSE_JUMP, philox4x32, philox_block, split_seed, unit
from .scheme import CellField, TransitionTable, assemble_transitions
from .velocity import Quadrature, VelocityField, assemble_fluxes, net_flow

logger = logging.getLogger(__name__)

# one-sided normal tail beyond 3 sigma
THREE_SIGMA_TAIL = 0.5 * math.erfc(3 / math.sqrt(2))
# two-sided normal tail beyond 4 sigma
FOUR_SIGMA_TAIL = math.erfc(4 / math.sqrt(2))


@dataclass
class ParticleEnsemble:
    """Particle positions and weights at step ``n``.

    ``positions`` are lifted coordinates of shape ``(num_particles, dim)``;
    use :meth:`wrapped` for points in the fundamental domain.  ``ids`` are
    the stream ids used to key each particle's random numbers.
    """

    mesh: CartesianMesh
    positions: np.ndarray
    weights: np.ndarray
    ids: np.ndarray
    seed: int
    n: int = 0

    def __post_init__(self):
        if self.positions.shape != (self.ids.size, self.mesh.dim):
            raise ValueError("positions must have shape (num_particles, dim)")
        if np.any(self.weights < 0):
            raise ValueError("particle weights must be nonnegative")

    def __len__(self):
        return self.ids.size

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def wrapped(self) -> np.ndarray:
        return self.mesh.wrap(self.positions) if self.mesh.periodic else self.positions.copy()

    def cell_indices(self) -> np.ndarray:
        """Row-major index of the cell holding each particle."""
        return self.mesh.flat_index(self.mesh.locate(self.positions))

    def histogram(self) -> np.ndarray:
        """Particle weight per cell, shaped like the mesh."""
        mass = np.bincount(self.cell_indices(), weights=self.weights, minlength=self.mesh.num_cells)
        return mass.reshape(self.mesh.shape)


@dataclass
class MartingaleTrace:
    """Running sums ``M_k = sum_{l<k} xi^l`` per particle and their running sup norm."""

    h: float
    M: np.ndarray
    sup: np.ndarray
    steps: int = 0

    @classmethod
    def zeros(cls, h: float, num_particles: int, dim: int) -> "MartingaleTrace":
        return cls(h, np.zeros((num_particles, dim)), np.zeros(num_particles))

    @property
    def mean_sup(self) -> float:
        """Monte Carlo estimate of ``E[max_k |M_k|]``."""
        return float(self.sup.mean())

    @property
    def sup_stderr(self) -> float:
        if self.sup.size < 2:
            return math.nan
        return float(self.sup.std(ddof=1) / math.sqrt(self.sup.size))


@dataclass
class SimulationResult:
    """Output of :func:`simulate`.

    Per-step arrays have length ``N``: ``xi_max[n]`` is the largest ``|xi^n|``
    over the ensemble, ``xi_sq_mean[n]`` the weighted mean of ``|xi^n|^2`` and
    ``u_inf[n]`` the largest face velocity of step ``n``.  ``histograms`` has
    one entry per step ``0..N`` when requested.  ``xi_cell_sum``,
    ``xi_cell_sq`` and ``xi_cell_count`` pool the increments over all steps
    by the cell the particle occupied when the increment was drawn.
    """

    ensemble: ParticleEnsemble
    trace: MartingaleTrace
    dt: float
    steps: int
    xi_max: np.ndarray
    xi_sq_mean: np.ndarray
    u_inf: np.ndarray
    xi_cell_sum: np.ndarray
    xi_cell_sq: np.ndarray
    xi_cell_count: np.ndarray
    histograms: list[np.ndarray] | None = None
    positions: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def mesh(self) -> CartesianMesh:
        return self.ensemble.mesh

    @property
    def xi_bound_ok(self) -> bool:
        """Every sampled increment satisfies ``|xi| <= 4h``."""
        return bool(np.all(self.xi_max <= 4 * self.mesh.h))

    def moment_constant(self) -> float:
        """Observed ``C`` in ``E|xi^n|^2 <= C dt u_inf^n h`` (max over steps with motion)."""
        denom = self.dt * self.u_inf * self.mesh.h
        moving = denom > 0
        if not np.any(moving):
            return 0.0
        return float(np.max(self.xi_sq_mean[moving] / denom[moving]))

    def centering_scores(self) -> np.ndarray:
        """Per-cell, per-axis ``|mean xi| / (std xi / sqrt(count))`` (nan where undefined)."""
        cnt = self.xi_cell_count[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = self.xi_cell_sum / cnt
            var = (self.xi_cell_sq - cnt * mean ** 2) / (cnt - 1)
            se = np.sqrt(np.maximum(var, 0.0) / cnt)
            score = np.where(se > 0, np.abs(mean) / se, np.where(np.abs(mean) > 0, np.inf, 0.0))
        score[self.xi_cell_count < 2] = np.nan
        return score


def _unit53(w0, w1):
    hi = (np.asarray(w0, dtype=np.uint64) >> np.uint64(5)).astype(np.float64)
    lo = (np.asarray(w1, dtype=np.uint64) >> np.uint64(6)).astype(np.float64)
    return (hi * 2.0 ** 26 + lo + 0.5) * 2.0 ** -53


def sample_initial(rho0: CellField, num_particles: int, seed: int, first_id: int = 0) -> ParticleEnsemble:
    """Draw particles from the discrete density ``rho0`` (cell by mass, then uniform inside)."""
    mesh = rho0.mesh
    if num_particles < 1:
        raise ValueError("need at least one particle")
    vals = rho0.values.ravel()
    if np.any(vals < 0):
        raise ValueError("the particle representation needs a nonnegative initial field")
    mass = vals * mesh.cell_volume
    total = float(mass.sum())
    if total <= 0:
        raise ValueError("initial field has zero mass")
    ids = np.arange(first_id, first_id + num_particles, dtype=np.uint64)
    k0, k1 = split_seed(seed)
    words = philox4x32((ids & np.uint64(0xFFFFFFFF), ids >> np.uint64(32), 0, PURPOSE_INIT), (k0, k1))
    u = _unit53(words[:, 0], words[:, 1])
    cdf = np.cumsum(mass)
    cell = np.searchsorted(cdf, u * cdf[-1], side="right")
    # guard against u * total rounding onto the last breakpoint
    last = int(np.flatnonzero(mass > 0)[-1])
    cell = np.minimum(cell, last)
    idx = np.stack(np.unravel_index(cell, mesh.shape), axis=-1)
    inside = (words[:, 2:2 + mesh.dim].astype(np.float64) + 0.5) * 2.0 ** -32
    pos = (idx + inside) * np.asarray(mesh.widths)
    weights = np.full(num_particles, total / num_particles)
    return ParticleEnsemble(mesh, pos, weights, ids, int(seed), rho0.n)


def _lifted_cells(mesh: CartesianMesh, pos: np.ndarray):
    widths = np.asarray(mesh.widths)
    n = np.asarray(mesh.shape)
    lifted = np.floor(pos / widths).astype(np.int64)
    if mesh.periodic:
        cell = np.mod(lifted, n)
    else:
        lifted = np.clip(lifted, 0, n - 1)
        cell = lifted
    flat = np.ravel_multi_index(tuple(cell.T), mesh.shape)
    return lifted, flat


def _per_cell_probabilities(transitions: TransitionTable):
    mesh = transitions.mesh
    ph = np.stack([transitions.to_high(a).ravel() for a in range(mesh.dim)])
    pl = np.stack([transitions.to_low(a).ravel() for a in range(mesh.dim)])
    return np.ascontiguousarray(ph), np.ascontiguousarray(pl)


def jump(positions, transitions: TransitionTable, mesh: CartesianMesh, rng) -> np.ndarray:
    """One draw of the jump kernel for each row of ``positions`` (lifted coordinates).

    ``rng`` is a :class:`numpy.random.Generator` or an array of uniforms of
    shape ``(num_points, 1 + dim)``: column 0 selects stay or target cell and
    the remaining columns place the particle inside the target cell.
    """
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    if pos.shape[1] != mesh.dim:
        raise ValueError(f"positions must have trailing dimension {mesh.dim}")
    if isinstance(rng, np.random.Generator):
        u = rng.random((pos.shape[0], 1 + mesh.dim))
    else:
        u = np.asarray(rng, dtype=float).reshape(pos.shape[0], -1)
    lifted, flat = _lifted_cells(mesh, pos)
    ph, pl = _per_cell_probabilities(transitions)
    new = pos.copy()
    acc = np.zeros(pos.shape[0])
    moved = np.zeros(pos.shape[0], dtype=bool)
    widths = np.asarray(mesh.widths)
    for a in range(mesh.dim):
        for probs, sign in ((ph[a], 1), (pl[a], -1)):
            lo = acc.copy()
            acc = acc + probs[flat]
            hit = ~moved & (u[:, 0] >= lo) & (u[:, 0] < acc)
            if np.any(hit):
                target = lifted[hit].copy()
                target[:, a] += sign
                new[hit] = (target + u[hit, 1:1 + mesh.dim]) * widths
                moved |= hit
    return new


@nb.njit(parallel=True, cache=True)
def _advance(pos, lifted, flat, ph, pl, drift, widths, dt, k0, k1, step, ids, new, xi, M, sup):
    P, d = pos.shape
    mask = np.uint64(0xFFFFFFFF)
    for i in nb.prange(P):
        pid = ids[i]
        w0, w1, w2, w3 = philox_block(pid & mask, pid >> np.uint64(32), np.uint64(step),
                                      np.uint64(PURPOSE_JUMP), k0, k1)
        u = unit(w0)
        c = flat[i]
        axis = -1
        direction = 0
        acc = 0.0
        for a in range(d):
            acc += ph[a, c]
            if u < acc:
                axis = a
                direction = 1
                break
            acc += pl[a, c]
            if u < acc:
                axis = a
                direction = -1
                break
        if axis < 0:
            for b in range(d):
                new[i, b] = pos[i, b]
        else:
            for b in range(d):
                lb = lifted[i, b]
                if b == axis:
                    lb += direction
                ub = unit(w1) if b == 0 else unit(w2)
                new[i, b] = (lb + ub) * widths[b]
        s2 = 0.0
        for b in range(d):
            x = new[i, b] - pos[i, b] - dt * drift[b, c]
            xi[i, b] = x
            M[i, b] += x
            s2 += M[i, b] * M[i, b]
        r = math.sqrt(s2)
        if r > sup[i]:
            sup[i] = r


def simulate(rho0_field: CellField, field: VelocityField, mesh: CartesianMesh, dt: float, N: int,
             num_particles: int, seed: int, *, quadrature: Quadrature | None = None,
             histograms: bool = False, keep_positions: bool = False, trajectory=None,
             threads: int | None = None) -> SimulationResult:
    """Run ``num_particles`` stochastic characteristics for ``N`` steps.

    Parameters
    ----------
    rho0_field : CellField
        Nonnegative discrete initial density; particles are drawn from it.
    histograms : bool
        Record the particle weight per cell at every step ``0..N``.
    keep_positions : bool
        Keep the lifted positions of every step in memory.
    trajectory : TrajectoryWriter, optional
        Receives the lifted positions of every step (flat binary dump).
    threads : int, optional
        Number of worker threads for the particle update.
    """
    if not rho0_field.mesh.same_as(mesh):
        raise ValueError("initial field lives on a different mesh")
    if N < 0:
        raise ValueError("N must be nonnegative")
    if threads:
        nb.set_num_threads(min(int(threads), nb.config.NUMBA_NUM_THREADS))
    ens = sample_initial(rho0_field, num_particles, seed)
    k0, k1 = (np.uint64(w) for w in split_seed(seed))
    widths = np.asarray(mesh.widths)
    trace = MartingaleTrace.zeros(mesh.h, num_particles, mesh.dim)
    pos = ens.positions
    xi = np.empty_like(pos)
    xi_max = np.zeros(N)
    xi_sq = np.zeros(N)
    u_inf = np.zeros(N)
    cell_sum = np.zeros((mesh.num_cells, mesh.dim))
    cell_sq = np.zeros((mesh.num_cells, mesh.dim))
    cell_cnt = np.zeros(mesh.num_cells)
    hist = [] if histograms else None
    kept = [pos.copy()] if keep_positions else None
    if trajectory is not None:
        trajectory.write(0, rho0_field.t, pos)
    w = ens.weights
    t = rho0_field.t
    transitions = drift = ph = pl = None
    for n in range(N):
        lifted, flat = _lifted_cells(mesh, pos)
        if hist is not None:
            hist.append(np.bincount(flat, weights=w, minlength=mesh.num_cells).reshape(mesh.shape))
        if transitions is None or not field.stationary:
            fluxes = assemble_fluxes(field, mesh, t, dt, quadrature, n=rho0_field.n + n)
            transitions = assemble_transitions(fluxes, mesh, dt)
            drift = np.ascontiguousarray(net_flow(fluxes, mesh).reshape(-1, mesh.dim).T)
            ph, pl = _per_cell_probabilities(transitions)
            speed = max(float(np.max(np.abs(v), initial=0.0)) for v in fluxes.normal)
        u_inf[n] = speed
        new = np.empty_like(pos)
        _advance(pos, lifted, flat, ph, pl, drift, widths, dt, k0, k1, rho0_field.n + n,
                 ens.ids, new, xi, trace.M, trace.sup)
        norms2 = np.einsum("ij,ij->i", xi, xi)
        xi_max[n] = math.sqrt(float(norms2.max()))
        xi_sq[n] = float(w @ norms2) / float(w.sum())
        cell_cnt += np.bincount(flat, minlength=mesh.num_cells)
        for a in range(mesh.dim):
            cell_sum[:, a] += np.bincount(flat, weights=xi[:, a], minlength=mesh.num_cells)
            cell_sq[:, a] += np.bincount(flat, weights=xi[:, a] ** 2, minlength=mesh.num_cells)
        pos = new
        t = t + dt
        if kept is not None:
            kept.append(pos.copy())
        if trajectory is not None:
            trajectory.write(rho0_field.n + n + 1, t, pos)
    trace.steps = N
    ens.positions = pos
    ens.n = rho0_field.n + N
    if hist is not None:
        _, flat = _lifted_cells(mesh, pos)
        hist.append(np.bincount(flat, weights=w, minlength=mesh.num_cells).reshape(mesh.shape))
    return SimulationResult(ens, trace, dt, N, xi_max, xi_sq, u_inf, cell_sum, cell_sq, cell_cnt,
                            hist, kept)


@dataclass
class LawCheckReport:
    """Per-step comparison of particle histograms with the scheme."""

    tv: np.ndarray
    band: np.ndarray
    cell_failures: np.ndarray
    cells_checked: int
    passed: bool

    def __str__(self):
        worst = int(np.argmax(self.tv / self.band)) if self.tv.size else 0
        return (
            f"law check {'passed' if self.passed else 'FAILED'}: max TV/band = "
            f"{(self.tv / self.band).max(initial=0):.3f} at step {worst}; "
            f"{int(self.cell_failures.sum())} per-cell binomial failures "
            f"({self.cells_checked} cells per step)"
        )


def tv_band(p: np.ndarray, num_particles: int, tail: float = THREE_SIGMA_TAIL) -> float:
    """Upper confidence bound for the TV distance of an ``M``-sample histogram.

    ``E[TV] <= 1/2 sum_K sqrt(p_K (1 - p_K) / M)`` by Jensen, and TV has
    bounded differences ``1/M``, so McDiarmid adds ``sqrt(ln(1/tail) / 2M)``
    for a false-alarm rate of at most ``tail``.
    """
    p = np.asarray(p, dtype=float).ravel()
    mean = 0.5 * float(np.sum(np.sqrt(p * (1 - p) / num_particles)))
    return mean + math.sqrt(math.log(1 / tail) / (2 * num_particles))


def empirical_law_check(sim: SimulationResult, scheme_trajectory: Sequence[CellField], *,
                        tolerance="3sigma", cells_per_step: int = 16,
                        cell_tail: float = FOUR_SIGMA_TAIL, seed: int = 0) -> LawCheckReport:
    """Compare ``psi^n_# rho_h^0`` (particle histograms) with ``rho_h^n`` step by step.

    ``tolerance="3sigma"`` uses :func:`tv_band`; a float is a fixed TV
    threshold.  On top of the TV test, ``cells_per_step`` randomly chosen
    cells get an exact binomial test at two-sided level ``cell_tail``.
    """
    if sim.histograms is None:
        raise ValueError("simulation was run without histograms")
    if len(scheme_trajectory) != len(sim.histograms):
        raise ValueError(
            f"scheme trajectory has {len(scheme_trajectory)} fields, simulation {len(sim.histograms)} steps"
        )
    mesh = sim.mesh
    M = len(sim.ensemble)
    total = sim.ensemble.total_weight
    pick = np.random.default_rng(seed)
    tv, band, fails = [], [], []
    k = min(cells_per_step, mesh.num_cells)
    for n, (hist, rho) in enumerate(zip(sim.histograms, scheme_trajectory)):
        if not rho.mesh.same_as(mesh):
            raise ValueError("scheme trajectory lives on a different mesh")
        if np.any(rho.values < -1e-14 * np.abs(rho.values).max(initial=0)):
            raise ValueError("scheme trajectory is not nonnegative")
        p = np.clip(rho.values.ravel() * mesh.cell_volume / total, 0.0, None)
        p = p / p.sum()
        q = hist.ravel() / total
        tv.append(0.5 * float(np.abs(q - p).sum()))
        band.append(tv_band(p, M) if tolerance == "3sigma" else float(tolerance))
        cells = pick.choice(mesh.num_cells, size=k, replace=False)
        counts = np.rint(q[cells] * M)
        lo = stats.binom.cdf(counts, M, p[cells])
        hi = stats.binom.sf(counts - 1, M, p[cells])
        pval = np.minimum(1.0, 2 * np.minimum(lo, hi))
        fails.append(int(np.sum(pval < cell_tail)))
    tv, band, fails = np.array(tv), np.array(band), np.array(fails)
    return LawCheckReport(tv, band, fails, k, bool(np.all(tv <= band) and not fails.any()))


@dataclass
class ScalingResult:
    """``E[sup_k |M_k|]`` per mesh size and the log-log slope against ``h``."""

    h: np.ndarray
    mean_sup: np.ndarray
    stderr: np.ndarray
    slope: float
    intercept: float
    degenerate: bool

    def __str__(self):
        if self.degenerate:
            return "martingale scaling: degenerate (no motion at any h)"
        return f"martingale scaling: E sup|M| ~ h^{self.slope:.3f}"


def martingale_scaling(traces: Sequence[MartingaleTrace]) -> ScalingResult:
    """Least-squares slope of ``log E[sup_k |M_k|]`` against ``log h``."""
    if len(traces) < 3:
        raise ValueError(f"need at least 3 sweep points, got {len(traces)}")
    h = np.array([t.h for t in traces])
    if np.unique(h).size != h.size:
        raise ValueError("sweep points must have distinct h")
    ms = np.array([t.mean_sup for t in traces])
    se = np.array([t.sup_stderr for t in traces])
    if np.all(ms == 0):
        return ScalingResult(h, ms, se, math.nan, math.nan, True)
    if np.any(ms <= 0):
        raise ValueError("some sweep points show no motion; slope undefined")
    slope, intercept = np.polyfit(np.log(h), np.log(ms), 1)
    return ScalingResult(h, ms, se, float(slope), float(intercept), False)
