import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

from upwind_transport.mesh import build_mesh, unit_torus
from upwind_transport.metrics import (hminus1_norm, kr_fields, l_norm_error, w1_1d, w1_fields, w1_fields_1d)
from upwind_transport.scheme import CellField
from upwind_transport.transport import (DiscreteMeasure, SizeCapExceeded, TransportError, coupling_upper_bound,
                                        kr_distance, log_cost, solve_transport, transshipment, wasserstein1)


def atomized_assignment(mu, nu, cost):
    """Exact OT for integer masses: split into unit atoms and solve the assignment."""
    x = np.repeat(mu.points, mu.masses.astype(int), axis=0)
    y = np.repeat(nu.points, nu.masses.astype(int), axis=0)
    C = cost(x, y)
    i, j = linear_sum_assignment(C)
    return float(C[i, j].sum())


def lp_oracle(mu, nu, C):
    m, n = C.shape
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1
    for j in range(n):
        A[m + j, j::n] = 1
    res = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([mu.masses, nu.masses]), method="highs")
    return res.fun


grid_point = st.tuples(st.integers(0, 9), st.integers(0, 9))
atom_pair = st.integers(1, 8).flatmap(
    lambda k: st.tuples(st.lists(grid_point, min_size=k, max_size=k), st.lists(grid_point, min_size=k, max_size=k)))


def merged(atoms):
    """Unit atoms on a grid merged into a measure with integer masses."""
    pts, counts = np.unique(np.array(atoms, float) / 9, axis=0, return_counts=True)
    return DiscreteMeasure(pts, counts.astype(float))


def test_two_by_two_brute_force():
    mu = DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]], [1.0, 1.0])
    nu = DiscreteMeasure([[0.0, 1.0], [1.0, 1.0]], [1.0, 1.0])
    C = cdist(mu.points, nu.points)
    brute = min(C[0, p[0]] + C[1, p[1]] for p in itertools.permutations(range(2)))
    assert wasserstein1(mu, nu) == pytest.approx(brute, abs=1e-12)
    assert wasserstein1(mu, nu) == pytest.approx(2.0, abs=1e-12)


def test_unit_masses_and_identity():
    mu = DiscreteMeasure([[0.1], [0.7]], [0.5, 0.5])
    assert wasserstein1(mu, mu) == 0.0
    assert kr_distance(mu, mu, 0.3)[0] == 0.0
    nu = DiscreteMeasure([[0.4]], [1.0])
    assert wasserstein1(mu, nu) == pytest.approx(0.5 * 0.3 + 0.5 * 0.3, abs=1e-12)
    assert kr_distance(mu, nu, 0.3)[0] == pytest.approx(math.log(2.0), abs=1e-12)


@given(atom_pair)
@settings(max_examples=40)
def test_matches_assignment_oracle(atoms):
    mu, nu = merged(atoms[0]), merged(atoms[1])
    for cost in (lambda x, y: cdist(x, y), log_cost(0.2)):
        plan = solve_transport(mu, nu, cost)
        assert plan.cost == pytest.approx(atomized_assignment(mu, nu, cost), abs=1e-9)
        src, dst = plan.marginals(len(mu.compressed()), len(nu.compressed()))
        np.testing.assert_allclose(src, mu.compressed().masses, atol=1e-9)
        np.testing.assert_allclose(dst, nu.compressed().masses, atol=1e-9)


def test_matches_linprog_on_random_float_instance(rng):
    mu = DiscreteMeasure(rng.random((30, 2)), rng.random(30))
    nu = DiscreteMeasure(rng.random((25, 2)), rng.random(25))
    nu = DiscreteMeasure(nu.points, nu.masses * mu.total / nu.total)
    ref = lp_oracle(mu, nu, cdist(mu.points, nu.points))
    assert wasserstein1(mu, nu) == pytest.approx(ref, rel=1e-9)
    plan = solve_transport(mu, nu)
    assert plan.gap <= 1e-8 * max(1.0, plan.cost)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25)
def test_kr_properties(seed):
    rng = np.random.default_rng(seed)
    pts = [rng.random((6, 2)) for _ in range(3)]
    ms = [rng.random(6) + 0.1 for _ in range(3)]
    meas = [DiscreteMeasure(p, m / m.sum()) for p, m in zip(pts, ms)]
    r = 0.1
    d01 = kr_distance(meas[0], meas[1], r)[0]
    d12 = kr_distance(meas[1], meas[2], r)[0]
    d02 = kr_distance(meas[0], meas[2], r)[0]
    assert d02 <= d01 + d12 + 1e-10
    assert kr_distance(meas[0], meas[1], r, reduce=False)[0] == pytest.approx(d01, abs=1e-10)
    assert d01 <= wasserstein1(meas[0], meas[1]) / r + 1e-10
    assert kr_distance(meas[0], meas[1], 2 * r)[0] <= d01 + 1e-12
    # pairing the i-th atoms is a feasible coupling of equal-weight measures
    eq = [DiscreteMeasure(p, np.full(6, 1 / 6)) for p in pts[:2]]
    assert kr_distance(eq[0], eq[1], r)[0] <= coupling_upper_bound(pts[0], pts[1], r=r, normalize=True) + 1e-10


def test_transshipment_cancels_common_mass():
    mu = DiscreteMeasure([[0.0], [1.0]], [2.0, 1.0])
    nu = DiscreteMeasure([[0.0], [2.0]], [1.5, 1.5])
    pos, neg = transshipment(mu, nu)
    np.testing.assert_allclose(pos.points[:, 0], [0.0, 1.0])
    np.testing.assert_allclose(pos.masses, [0.5, 1.0])
    np.testing.assert_allclose(neg.points[:, 0], [2.0])
    np.testing.assert_allclose(neg.masses, [1.5])


def test_errors():
    mu = DiscreteMeasure([[0.0]], [1.0])
    nu = DiscreteMeasure([[1.0]], [2.0])
    with pytest.raises(TransportError):
        wasserstein1(mu, nu)
    assert wasserstein1(mu, nu, rescale=True) == pytest.approx(1.0)
    big = DiscreteMeasure(np.random.default_rng(0).random((60, 1)), np.ones(60))
    big2 = DiscreteMeasure(np.random.default_rng(1).random((60, 1)), np.ones(60))
    with pytest.raises(SizeCapExceeded):
        wasserstein1(big, big2, size_cap=50)
    with pytest.raises(ValueError):
        log_cost(0.0)
    with pytest.raises(ValueError):
        DiscreteMeasure([[0.0]], [-1.0])
    with pytest.raises(ValueError):
        DiscreteMeasure([[0.0], [1.0]], [1.0])


def test_w1_1d_examples():
    mu = DiscreteMeasure([[0.0]], [1.0])
    nu = DiscreteMeasure([[0.25], [0.75]], [0.5, 0.5])
    assert w1_1d(mu, nu) == pytest.approx(0.5)
    assert w1_1d(nu, nu) == 0.0
    with pytest.raises(TransportError):
        w1_1d(mu, DiscreteMeasure([[0.0]], [2.0]))
    with pytest.raises(ValueError):
        w1_1d(DiscreteMeasure([[0.0, 0.0]], [1.0]), mu)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=30)
def test_w1_1d_matches_lp(seed):
    rng = np.random.default_rng(seed)
    mu = DiscreteMeasure(rng.random((7, 1)), rng.random(7) + 0.01)
    nu = DiscreteMeasure(rng.random((5, 1)), rng.random(5) + 0.01)
    nu = DiscreteMeasure(nu.points, nu.masses * mu.total / nu.total)
    ref = lp_oracle(mu, nu, cdist(mu.points, nu.points))
    assert w1_1d(mu, nu) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_w1_fields_agree_between_paths(rng):
    m = build_mesh(1, 1.0, 40, "noflux")
    a, b = CellField(m, rng.random(40)), CellField(m, rng.random(40))
    b = b.with_values(b.values * a.mass() / b.mass())
    pos, neg = DiscreteMeasure.from_field(a), DiscreteMeasure.from_field(b)
    assert w1_fields_1d(a, b) == pytest.approx(wasserstein1(pos, neg), rel=1e-9)
    assert w1_fields(a, b) == pytest.approx(w1_fields_1d(a, b), rel=1e-12)


def test_kr_fields_two_dimensional(rng):
    m = unit_torus(6)
    a = CellField(m, rng.random((6, 6)))
    b = CellField(m, rng.random((6, 6)))
    b = b.with_values(b.values * a.mass() / b.mass())
    d = kr_fields(a, b, 0.1)
    assert 0 < d <= w1_fields(a, b) / 0.1 + 1e-12
    assert kr_fields(a, a, 0.1) == 0.0


@pytest.mark.parametrize("dim", [1, 2])
@pytest.mark.parametrize("freq", [1, 2])
def test_hminus1_cosines(dim, freq):
    n = 256
    m = build_mesh(dim, 1.0 if dim == 1 else (1.0, 1.0), n if dim == 1 else (n, n))
    h = 1 / n
    edges = np.arange(n + 1) * h
    avg = np.diff(np.sin(2 * np.pi * freq * edges)) / (2 * np.pi * freq * h)
    vals = avg if dim == 1 else np.repeat(avg[:, None], n, axis=1)
    expected = 1 / (2 * freq * math.sqrt(2) * math.pi)
    assert hminus1_norm(CellField(m, vals)) == pytest.approx(expected, rel=1e-3)


def test_hminus1_rejections():
    with pytest.raises(ValueError):
        hminus1_norm(CellField(unit_torus(8), np.ones((8, 8))))
    with pytest.raises(ValueError):
        hminus1_norm(CellField(build_mesh(1, 1.0, 8, "noflux"), np.r_[np.ones(4), -np.ones(4)]))


def test_l_norm_examples():
    m = unit_torus(4)
    a, b = CellField(m, np.ones((4, 4))), CellField(m, -np.ones((4, 4)))
    assert l_norm_error(a, b, 1) == pytest.approx(2.0)
    assert l_norm_error(a, b, 2) == pytest.approx(2.0)
    assert l_norm_error(a, b, np.inf) == 2.0
    with pytest.raises(ValueError):
        l_norm_error(a, b, 0.5)
    with pytest.raises(ValueError):
        l_norm_error(a, CellField(unit_torus(5), np.ones((5, 5))))


def test_concave_cost_two_by_two():
    mu = DiscreteMeasure([[0.0], [1.0]], [1.0, 1.0])
    nu = DiscreteMeasure([[0.4], [2.0]], [1.0, 1.0])
    brute = min(math.log(1.4) + math.log(2.0), math.log(3.0) + math.log(1.6))
    assert kr_distance(mu, nu, 1.0)[0] == pytest.approx(brute, abs=1e-12)


def test_constant_distance_pairs():
    x = np.zeros((4, 1))
    y = np.full((4, 1), 0.3)
    assert coupling_upper_bound(x, y, r=0.1) == pytest.approx(4 * math.log(4.0))
    mu, nu = DiscreteMeasure(x[:1], [4.0]), DiscreteMeasure(y[:1], [4.0])
    assert kr_distance(mu, nu, 0.1)[0] == pytest.approx(4 * math.log(4.0))


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=20)
def test_kr_below_w1_over_r_in_one_dimension(seed):
    rng = np.random.default_rng(seed)
    mu = DiscreteMeasure(rng.random((8, 1)), np.full(8, 1 / 8))
    nu = DiscreteMeasure(rng.random((5, 1)), np.full(5, 1 / 5))
    for r in (0.05, 0.5, 2.0):
        assert kr_distance(mu, nu, r)[0] <= w1_1d(mu, nu) / r + 1e-12
