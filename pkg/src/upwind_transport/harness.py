"""Convergence studies, the rough-datum optimality example and CSV export."""

from __future__ import annotations

import csv
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import PowerSingularity, checkerboard
from .mesh import build_mesh, unit_torus
from .metrics import hminus1_norm, kr_fields, l_norm_error, w1_fields, w1_fields_1d
from .scheme import CellField, binomial_closed_form, discretize_initial, num_steps, run
from .transport import DEFAULT_SIZE_CAP, SizeCapExceeded
from .velocity import BUILTIN_FIELDS, VelocityField, builtin_constant

logger = logging.getLogger(__name__)

METRICS = ("l1", "l2", "hm1", "w1", "kr")
# CSV column of every metric; the first four columns are fixed
COLUMN = {"l1": "L1", "hm1": "H-1", "l2": "L2", "w1": "W1", "kr": "KR"}
BASE_COLUMNS = ("meshsize", "L1", "H-1", "Rate")
WALL_COLUMN = "wall_time"

DEFAULT_SWEEP = tuple(2.0 ** -k for k in range(5, 11))
FULL_SWEEP = tuple(2.0 ** -k for k in range(5, 12))
OPTIMALITY_SWEEP = tuple(2.0 ** -k for k in range(8, 15))


class ContractViolation(RuntimeError):
    """A fitted rate fell outside its acceptance window."""


def power_sweep(kmin: int, kmax: int) -> tuple[float, ...]:
    """``(2^-kmin, ..., 2^-kmax)``, coarse to fine."""
    lo, hi = sorted((abs(int(kmin)), abs(int(kmax))))
    return tuple(2.0 ** -k for k in range(lo, hi + 1))


def resolve_field(spec) -> VelocityField:
    """A :class:`VelocityField` from a built-in name, ``"zero"`` or a field instance."""
    if isinstance(spec, VelocityField):
        return spec
    if spec == "zero":
        return builtin_constant((0.0, 0.0))
    try:
        return BUILTIN_FIELDS[spec]()
    except KeyError:
        raise ValueError(f"unknown field {spec!r}; choose from {sorted(BUILTIN_FIELDS)} or 'zero'") from None


@dataclass
class StudyConfig:
    """Parameters of a time-reversal convergence study on the unit torus.

    ``hs`` are cell widths; ``dt = dt_ratio * h``.  The datum is advected to
    ``flip``, the field is negated, and the run continues to ``T``; the exact
    solution at ``T = 2 flip`` is the datum itself.  ``r`` is ``"sqrt-h"`` or
    a fixed positive number for the KR metric.
    """

    field: object = "constant"
    hs: Sequence[float] = DEFAULT_SWEEP
    dt_ratio: float = 0.25
    T: float = 2.0
    flip: float | None = 1.0
    metrics: Sequence[str] = ("l1", "hm1")
    r: object = "sqrt-h"
    datum: Callable = checkerboard
    seed: int = 0
    quadrature_points: int = 4
    size_cap: int = DEFAULT_SIZE_CAP
    strict: bool = False

    def __post_init__(self):
        self.hs = tuple(float(h) for h in self.hs)
        self.metrics = tuple(m.lower() for m in self.metrics)
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise ValueError(f"unknown metrics {bad}; choose from {METRICS}")
        if "l1" not in self.metrics:
            self.metrics = ("l1",) + self.metrics
        if len(set(self.hs)) < 3:
            raise ValueError("a rate study needs at least 3 distinct mesh sizes")
        if self.dt_ratio <= 0:
            raise ValueError("dt_ratio must be positive")
        if self.r != "sqrt-h" and not float(self.r) > 0:
            raise ValueError("r must be 'sqrt-h' or a positive number")
        for h in self.hs:
            cells = 1.0 / h
            if abs(cells - round(cells)) > 1e-9 * cells:
                raise ValueError(f"h={h} does not divide the unit interval")
            dt = self.dt_ratio * h
            num_steps(self.T, dt, "T")
            if self.flip is not None:
                if not 0 <= self.flip <= self.T:
                    raise ValueError("flip time must lie in [0, T]")
                num_steps(self.flip, dt, "flip time")

    def r_value(self, h: float) -> float:
        return math.sqrt(h) if self.r == "sqrt-h" else float(self.r)


@dataclass
class ErrorRecord:
    """Errors of one sweep point; ``rate`` is the fitted L1 slope of the sweep."""

    h: float
    errors: dict
    rate: float = math.nan
    wall_time: float = 0.0

    def __post_init__(self):
        for k, v in self.errors.items():
            if not (v >= 0 or math.isnan(v)):
                raise ValueError(f"error {k}={v} must be nonnegative")


@dataclass
class RateFit:
    """Least-squares slope of ``log error`` against ``log h``."""

    metric: str
    slope: float
    intercept: float
    max_residual: float
    used: int
    excluded: tuple[float, ...] = ()

    def __str__(self):
        return f"{self.metric}: rate {self.slope:.4f} (max residual {self.max_residual:.3g}, {self.used} points)"


@dataclass
class StudyResult:
    records: list[ErrorRecord]
    rates: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)
    closed_form_error: float = math.nan


def fit_rate(records: Sequence[ErrorRecord], metric: str) -> RateFit:
    """Fit ``error ~ c h^rate``; zero or missing errors are excluded with a warning."""
    if len(records) < 3:
        raise ValueError(f"need at least 3 records to fit a rate, got {len(records)}")
    h = np.array([r.h for r in records], dtype=float)
    if np.unique(h).size != h.size:
        raise ValueError("records must have distinct mesh sizes")
    e = np.array([r.errors.get(metric, math.nan) for r in records], dtype=float)
    good = np.isfinite(e) & (e > 0)
    excluded = tuple(h[~good])
    if excluded:
        warnings.warn(f"{metric}: excluding {len(excluded)} point(s) with zero or missing error",
                      RuntimeWarning, stacklevel=2)
    if good.sum() < 2:
        return RateFit(metric, math.nan, math.nan, math.nan, int(good.sum()), excluded)
    x, y = np.log(h[good]), np.log(e[good])
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.max(np.abs(y - (slope * x + intercept))))
    return RateFit(metric, float(slope), float(intercept), resid, int(good.sum()), excluded)


def monotone_inversions(records: Sequence[ErrorRecord], metric: str) -> int:
    """Number of refinements (decreasing ``h``) at which the error grew."""
    ordered = sorted(records, key=lambda r: -r.h)
    e = [r.errors.get(metric, math.nan) for r in ordered]
    return sum(1 for a, b in zip(e, e[1:]) if b > a)


def _soft_monotone_check(records, metrics):
    for m in metrics:
        k = monotone_inversions(records, m)
        if k > 1:
            warnings.warn(f"{m}: error increased {k} times under refinement", RuntimeWarning, stacklevel=3)
        elif k == 1:
            logger.info("%s: one inversion in the error sequence (tolerated)", m)


def _measure(metrics, approx: CellField, exact: CellField, config: StudyConfig, h: float):
    out = {}
    for m in metrics:
        try:
            if m == "l1":
                out[m] = l_norm_error(approx, exact, 1)
            elif m == "l2":
                out[m] = l_norm_error(approx, exact, 2)
            elif m == "hm1":
                out[m] = hminus1_norm(approx.with_values(approx.values - exact.values))
            elif m == "w1":
                out[m] = w1_fields(approx, exact, size_cap=config.size_cap)
            elif m == "kr":
                out[m] = kr_fields(approx, exact, config.r_value(h), size_cap=config.size_cap)
        except SizeCapExceeded as exc:
            if config.strict:
                raise
            logger.warning("h=%g: %s skipped (%s)", h, m, exc)
            out[m] = math.nan
    return out


def convergence_study(config: StudyConfig, snapshot_dir=None) -> StudyResult:
    """Run the time-reversal study over ``config.hs`` and fit a rate per metric.

    A sweep point whose time step violates the CFL condition is skipped with
    a diagnostic (or aborts the study when ``config.strict`` is set).
    """
    from .scheme import CFLViolation

    field_ = resolve_field(config.field)
    records, skipped = [], []
    for h in config.hs:
        start = time.perf_counter()
        mesh = unit_torus(int(round(1 / h)), dim=field_.dim)
        dt = config.dt_ratio * h
        rho0 = discretize_initial(config.datum, mesh, config.quadrature_points)
        flip = config.T if config.flip is None else config.flip
        try:
            mid = run(rho0, field_, mesh, dt, flip, keep="final")[0]
            final = run(mid, field_.negated(), mesh, dt, config.T - flip, keep="final", t0=flip)[0]
        except CFLViolation as exc:
            if config.strict:
                raise
            logger.warning("h=%g skipped: %s", h, exc)
            skipped.append((h, str(exc)))
            continue
        errors = _measure(config.metrics, final, rho0, config, h)
        records.append(ErrorRecord(h, errors, wall_time=time.perf_counter() - start))
        logger.info("h=%g %s", h, errors)
        if snapshot_dir is not None:
            from .io import write_snapshot

            Path(snapshot_dir).mkdir(parents=True, exist_ok=True)
            write_snapshot(Path(snapshot_dir) / f"final_h{int(round(1 / h))}.bin", final)
    result = StudyResult(records, skipped=skipped)
    if len(records) >= 3:
        result.rates = {m: fit_rate(records, m) for m in config.metrics}
        for r in records:
            r.rate = result.rates["l1"].slope
        _soft_monotone_check(records, config.metrics)
    return result


def optimality_example(s: float, hs: Sequence[float] = OPTIMALITY_SWEEP, T: float = 1.0, U: float = 1.0,
                       R: float | None = None, closed_form: bool = True,
                       closed_form_rtol: float = 1e-12) -> StudyResult:
    """Constant advection of ``x^-s`` on ``(0, 1]`` in 1-D with ``dt U = h/2``.

    The exact solution is the translated datum, averaged over cells in closed
    form.  Each point reports the L1 and W1 errors; when ``closed_form`` is
    set, the stepper is also checked against the binomial formula to
    ``closed_form_rtol * max(1, max |rho|)``.
    """
    datum = PowerSingularity(s)
    if U <= 0:
        raise ValueError("U must be positive")
    R = 2.0 + T * U if R is None else float(R)
    if R <= 1 + T * U:
        raise ValueError(f"domain length R={R} must exceed 1 + T U = {1 + T * U}")
    if len(set(hs)) < 3:
        raise ValueError("a rate study needs at least 3 distinct mesh sizes")
    field_ = builtin_constant((U,))
    exact_datum = datum.translated(T * U)
    records = []
    worst = 0.0
    for h in hs:
        start = time.perf_counter()
        cells = R / h
        if abs(cells - round(cells)) > 1e-9 * cells:
            raise ValueError(f"h={h} does not divide R={R}")
        mesh = build_mesh(1, R, int(round(cells)), "noflux")
        dt = h / (2 * U)
        N = num_steps(T, dt)
        rho0 = discretize_initial(datum, mesh)
        approx = run(rho0, field_, mesh, dt, T, keep="final")[0]
        exact = CellField(mesh, exact_datum.cell_averages(mesh), N, T)
        if closed_form:
            ref = binomial_closed_form(rho0.values, N, periodic=False)
            diff = float(np.max(np.abs(ref - approx.values)))
            scale = max(1.0, float(np.max(np.abs(ref))))
            worst = max(worst, diff / scale)
            if diff > closed_form_rtol * scale:
                raise AssertionError(f"h={h}: stepper and closed form differ by {diff:.3e}")
        errors = {"l1": l_norm_error(approx, exact, 1), "w1": w1_fields_1d(approx, exact)}
        records.append(ErrorRecord(h, errors, wall_time=time.perf_counter() - start))
        logger.info("s=%g h=%g %s", s, h, errors)
    rates = {m: fit_rate(records, m) for m in ("l1", "w1")}
    for r in records:
        r.rate = rates["l1"].slope
    return StudyResult(records, rates, closed_form_error=worst)


def optimality_targets(s: float) -> dict:
    """Expected rates: ``(1 - s)/2`` in L1 and ``(2 - s)/2`` in W1."""
    return {"l1": (1 - s) / 2, "w1": (2 - s) / 2}


def check_window(fit: RateFit, lo: float, hi: float) -> bool:
    return bool(lo <= fit.slope <= hi)


def export_csv(records: Sequence[ErrorRecord], path, wall_time: bool = True) -> Path:
    """Write ``meshsize,L1,H-1,Rate`` plus one column per further metric present.

    Values are written with ``repr`` so that reading them back is exact.
    """
    if not records:
        raise ValueError("no records to export")
    present = []
    for r in records:
        for m in r.errors:
            if m not in present:
                present.append(m)
    extra = [m for m in METRICS if m in present and m not in ("l1", "hm1")]
    header = list(BASE_COLUMNS) + [COLUMN[m] for m in extra] + ([WALL_COLUMN] if wall_time else [])
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            row = [r.h, r.errors.get("l1", math.nan), r.errors.get("hm1", math.nan), r.rate]
            row += [r.errors.get(m, math.nan) for m in extra]
            if wall_time:
                row.append(r.wall_time)
            w.writerow([repr(float(v)) for v in row])
    return path


def read_csv(path) -> list[ErrorRecord]:
    """Inverse of :func:`export_csv`; missing metrics come back as absent keys."""
    inverse = {v: k for k, v in COLUMN.items()}
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            errors = {}
            for col, val in row.items():
                if col in inverse and not math.isnan(float(val)):
                    errors[inverse[col]] = float(val)
            records.append(ErrorRecord(float(row["meshsize"]), errors, float(row["Rate"]),
                                       float(row.get(WALL_COLUMN, 0.0) or 0.0)))
    return records
