"""Command line entry point: ``upwind-transport {convergence,optimality,mcmc-check,kr}``."""

from __future__ import annotations

import argparse
import logging
import math
import sys

import numpy as np

from ._validation import parse_power
from .harness import (FULL_SWEEP, METRICS, ContractViolation, StudyConfig, convergence_study,
                      export_csv, optimality_example, optimality_targets, power_sweep)
from .scheme import CFLViolation

logger = logging.getLogger("upwind_transport")

# fitted-rate windows of the built-in studies: (lo, hi) for L1, and H^-1 >= L1
CONVERGENCE_WINDOWS = {"constant": (0.40, 0.60), "sobolev": (0.40, 1.0)}
OPTIMALITY_TOLERANCE = 0.15

EXIT_CFL = 2
EXIT_CONTRACT = 3
EXIT_INPUT = 4


def _metrics(text):
    names = [m.strip().lower() for m in text.split(",") if m.strip()]
    bad = [m for m in names if m not in METRICS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown metric(s) {bad}; choose from {','.join(METRICS)}")
    return names


def _r_rule(text):
    if text == "sqrt-h":
        return text
    try:
        r = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--r takes 'sqrt-h' or a positive number") from None
    if not r > 0:
        raise argparse.ArgumentTypeError("--r must be positive")
    return r


def _power(text):
    try:
        return parse_power(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _error_line(kind, **fields):
    parts = [f"error: kind={kind}"] + [f"{k}={v}" for k, v in fields.items()]
    print(" ".join(parts), file=sys.stderr)


def _set_threads(n):
    if n:
        import numba

        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def _print_records(result, metrics):
    cols = ["meshsize"] + list(metrics)
    print(" ".join(f"{c:>14s}" for c in cols))
    for r in result.records:
        print(" ".join([f"{r.h:14.6g}"] + [f"{r.errors.get(m, math.nan):14.6g}" for m in metrics]))
    for fit in result.rates.values():
        print(fit)


def cmd_convergence(args):
    hs = FULL_SWEEP if args.full else power_sweep(args.hmax, args.hmin)
    config = StudyConfig(field=args.field, hs=hs, dt_ratio=args.dt_ratio, T=args.T, flip=args.flip,
                         metrics=args.metrics, r=args.r, seed=args.seed, size_cap=args.size_cap,
                         strict=args.strict)
    result = convergence_study(config, snapshot_dir=args.snapshots)
    _print_records(result, config.metrics)
    if args.out:
        export_csv(result.records, args.out)
    for h, msg in result.skipped:
        _error_line("cfl_violation", h=h, detail=repr(msg))
    if args.strict:
        window = CONVERGENCE_WINDOWS.get(args.field)
        if window and result.rates:
            l1 = result.rates["l1"].slope
            if not window[0] <= l1 <= window[1]:
                raise ContractViolation(f"metric=l1 rate={l1:.4f} window=[{window[0]},{window[1]}]")
            if "hm1" in result.rates and not result.rates["hm1"].slope >= l1:
                raise ContractViolation(f"metric=hm1 rate={result.rates['hm1'].slope:.4f} below_l1={l1:.4f}")
    return 0


def cmd_optimality(args):
    hs = power_sweep(args.hmax, args.hmin)
    result = optimality_example(args.s, hs, T=args.T, U=args.U, R=args.R)
    _print_records(result, ("l1", "w1"))
    print(f"closed-form cross-check: max relative difference {result.closed_form_error:.3e}")
    if args.out:
        export_csv(result.records, args.out)
    if args.strict:
        for m, target in optimality_targets(args.s).items():
            rate = result.rates[m].slope
            if abs(rate - target) > OPTIMALITY_TOLERANCE:
                raise ContractViolation(f"metric={m} rate={rate:.4f} target={target:.4f}+-{OPTIMALITY_TOLERANCE}")
    return 0


def cmd_mcmc(args):
    from .io import TrajectoryWriter
    from .mesh import unit_torus
    from .scheme import CellField, discretize_initial, run
    from .stochastic import empirical_law_check, martingale_scaling, simulate
    from .harness import resolve_field

    field = resolve_field(args.field)
    mesh = unit_torus(args.cells, dim=field.dim)
    dt = args.dt_ratio * mesh.widths[0]
    rng = np.random.default_rng(args.seed)
    rho0 = CellField(mesh, rng.random(mesh.shape) + 0.1)
    traj = run(rho0, field, mesh, dt, args.steps * dt)
    writer = TrajectoryWriter(args.dump, args.particles, mesh.dim) if args.dump else None
    try:
        sim = simulate(rho0, field, mesh, dt, args.steps, args.particles, args.seed,
                       histograms=True, trajectory=writer, threads=args.threads)
    finally:
        if writer is not None:
            writer.close()
    law = empirical_law_check(sim, traj, seed=args.seed)
    print(f"increment bound |xi| <= 4h: {'ok' if sim.xi_bound_ok else 'VIOLATED'} "
          f"(max |xi|/h = {sim.xi_max.max(initial=0) / mesh.h:.4f})")
    print(law)
    print(f"observed moment constant E|xi|^2 / (dt u_inf h): {sim.moment_constant():.4f}")
    failures = []
    if not sim.xi_bound_ok:
        failures.append("xi_bound")
    if not law.passed:
        failures.append("law")
    if args.scaling_particles > 0:
        traces = []
        for h in power_sweep(args.hmax, args.hmin):
            m = unit_torus(int(round(1 / h)), dim=field.dim)
            start = discretize_initial(np.ones(m.shape), m)
            steps = int(round(args.T / (args.dt_ratio * h)))
            res = simulate(start, field, m, args.dt_ratio * h, steps, args.scaling_particles, args.seed,
                           threads=args.threads)
            traces.append(res.trace)
            print(f"h={h:<12.6g} E sup|M| = {res.trace.mean_sup:.6g} +- {res.trace.sup_stderr:.2g}")
        scaling = martingale_scaling(traces)
        print(scaling)
        if not scaling.degenerate and not 0.4 <= scaling.slope <= 0.6:
            failures.append("scaling")
    if failures and args.strict:
        raise ContractViolation("failed=" + ",".join(failures))
    return 0


def cmd_kr(args):
    from .io import read_snapshot
    from .mesh import build_mesh
    from .metrics import kr_fields
    from .scheme import CellField

    a, b = read_snapshot(args.first), read_snapshot(args.second)
    if a.cells_per_axis != b.cells_per_axis:
        print("error: kind=input detail='snapshots have different meshes'", file=sys.stderr)
        return EXIT_INPUT
    mesh = build_mesh(a.dim, args.extent, a.cells_per_axis, args.boundary)
    fa, fb = CellField(mesh, a.values, a.n, a.t), CellField(mesh, b.values, b.n, b.t)
    r = math.sqrt(max(mesh.widths)) if args.r == "sqrt-h" else args.r
    value = kr_fields(fa, fb, r, size_cap=args.size_cap)
    print(f"D_r = {value!r} (r = {r:g})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    common.add_argument("--threads", type=int, default=None, help="worker threads for compiled kernels")
    common.add_argument("--strict", action="store_true",
                        help="exit nonzero with an error line on CFL refusal or contract violation")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="upwind-transport", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convergence", parents=[common], help="time-reversal convergence study on the torus")
    c.add_argument("--field", choices=["constant", "sobolev", "zero"], default="constant")
    c.add_argument("--hmin", type=_power, default=10, help="finest mesh as k in 2^-k (default: 10)")
    c.add_argument("--hmax", type=_power, default=5, help="coarsest mesh as k in 2^-k (default: 5)")
    c.add_argument("--dt-ratio", type=float, default=0.25)
    c.add_argument("--T", type=float, default=2.0, help="final time (default: 2)")
    c.add_argument("--flip", type=float, default=1.0, help="time at which the field is reversed")
    c.add_argument("--metrics", type=_metrics, default=["l1", "hm1"], help="comma list of l1,l2,hm1,w1,kr")
    c.add_argument("--r", type=_r_rule, default="sqrt-h", help="KR scale: sqrt-h or a number")
    c.add_argument("--size-cap", type=int, default=5000, help="support cap of the exact OT solver")
    c.add_argument("--out", help="CSV output path")
    c.add_argument("--snapshots", help="directory for final-field snapshots")
    c.add_argument("--full", action="store_true", help="sweep 2^-5..2^-11 (overnight)")
    c.set_defaults(func=cmd_convergence)

    o = sub.add_parser("optimality", parents=[common], help="rough datum x^-s under constant advection")
    o.add_argument("--s", type=float, default=0.9)
    o.add_argument("--hmin", type=_power, default=14)
    o.add_argument("--hmax", type=_power, default=8)
    o.add_argument("--T", type=float, default=1.0)
    o.add_argument("--U", type=float, default=1.0)
    o.add_argument("--R", type=float, default=None, help="domain length (default: 2 + T U)")
    o.add_argument("--out", help="CSV output path")
    o.set_defaults(func=cmd_optimality)

    m = sub.add_parser("mcmc-check", parents=[common], help="Monte Carlo checks of the particle picture")
    m.add_argument("--field", choices=["constant", "sobolev", "zero"], default="constant")
    m.add_argument("--particles", type=int, default=10 ** 6)
    m.add_argument("--cells", type=int, default=8)
    m.add_argument("--steps", type=int, default=16)
    m.add_argument("--dt-ratio", type=float, default=0.25)
    m.add_argument("--hmin", type=_power, default=8, help="finest scaling mesh as k in 2^-k")
    m.add_argument("--hmax", type=_power, default=4)
    m.add_argument("--T", type=float, default=1.0, help="horizon of the scaling runs")
    m.add_argument("--scaling-particles", type=int, default=10 ** 5, help="0 skips the scaling sweep")
    m.add_argument("--dump", help="flat binary trajectory dump of the law-check run")
    m.set_defaults(func=cmd_mcmc)

    k = sub.add_parser("kr", parents=[common], help="D_r between two snapshot files")
    k.add_argument("first")
    k.add_argument("second")
    k.add_argument("--r", type=_r_rule, default="sqrt-h")
    k.add_argument("--extent", type=float, default=1.0)
    k.add_argument("--boundary", choices=["periodic", "noflux"], default="periodic")
    k.add_argument("--size-cap", type=int, default=5000)
    k.set_defaults(func=cmd_kr)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads(args.threads)
    try:
        return args.func(args)
    except CFLViolation as exc:
        _error_line("cfl_violation", detail=repr(str(exc)))
        return EXIT_CFL
    except ContractViolation as exc:
        _error_line("contract_violation", detail=str(exc))
        return EXIT_CONTRACT
    except ValueError as exc:
        _error_line("input", detail=repr(str(exc)))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
