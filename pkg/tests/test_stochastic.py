import math

import numpy as np
import pytest
from scipy import stats

from upwind_transport.mesh import build_mesh, unit_torus
from upwind_transport.scheme import CellField, assemble_transitions, run
from upwind_transport.stochastic import (MartingaleTrace, empirical_law_check, jump, martingale_scaling,
                                         sample_initial, simulate, tv_band)
from upwind_transport.velocity import assemble_fluxes, builtin_constant, builtin_sobolev_shear


def transitions_for(u, mesh, dt):
    return assemble_transitions(assemble_fluxes(u, mesh, 0.0, dt), mesh, dt)


def test_jump_identity_for_zero_field(rng):
    m = unit_torus(8)
    t = transitions_for(builtin_constant((0.0, 0.0)), m, 1 / 32)
    x = rng.random((1000, 2)) * 3 - 1
    np.testing.assert_array_equal(jump(x, t, m, rng), x)


def test_jump_frequency_and_uniform_landing():
    n = 8
    h = 1 / n
    m = build_mesh(1, 1.0, n)
    t = transitions_for(builtin_constant((1.0,)), m, h / 2)
    M = 10 ** 6
    rng = np.random.default_rng(2024)
    x = (3 + rng.random((M, 1))) * h
    y = jump(x, t, m, rng)
    moved = y[:, 0] >= 4 * h
    sigma = math.sqrt(0.25 / M)
    assert abs(moved.mean() - 0.5) <= 3 * sigma
    np.testing.assert_array_equal(y[~moved], x[~moved])
    assert np.all(y[moved, 0] < 5 * h)
    assert stats.kstest(y[moved, 0] / h - 4, "uniform").pvalue > 0.01


def test_jump_matches_transition_row():
    m = unit_torus(6)
    dt = 1 / 30
    t = transitions_for(builtin_sobolev_shear(), m, dt)
    cell = (2, 0)
    row = {k: v for k, v in t.row(cell).items() if v > 0}
    M = 400_000
    rng = np.random.default_rng(5)
    x = (np.array(cell) + rng.random((M, 2))) / 6
    y = jump(x, t, m, rng)
    landed = [tuple(c) for c in np.mod(np.floor(y * 6).astype(int), 6)]
    keys = list(row)
    counts = np.array([sum(1 for c in landed if c == k) for k in keys])
    assert counts.sum() == M
    expected = np.array([row[k] for k in keys]) * M
    assert stats.chisquare(counts, expected).pvalue > 1e-3


def test_jump_with_explicit_uniforms():
    m = build_mesh(1, 1.0, 4)
    t = transitions_for(builtin_constant((-1.0,)), m, 1 / 8)
    x = np.array([[0.1], [0.1]])
    u = np.array([[0.1, 0.5], [0.9, 0.5]])
    y = jump(x, t, m, u)
    # leftward probability 1/2 wraps into the lifted cell -1
    assert y[0, 0] == pytest.approx(-0.125)
    assert y[1, 0] == 0.1
    with pytest.raises(ValueError):
        jump(np.zeros((2, 2)), t, m, u)


def test_sample_initial_follows_density():
    m = build_mesh(1, 1.0, 4)
    rho = CellField(m, np.array([1.0, 0.0, 3.0, 0.0]))
    ens = sample_initial(rho, 200_000, 3)
    counts = np.bincount(ens.cell_indices(), minlength=4)
    assert counts[1] == counts[3] == 0
    assert abs(counts[0] / 200_000 - 0.25) < 4 * math.sqrt(0.25 * 0.75 / 200_000)
    assert ens.total_weight == pytest.approx(rho.mass())
    np.testing.assert_allclose(ens.histogram(), [0.25, 0, 0.75, 0], atol=0.01)
    with pytest.raises(ValueError):
        sample_initial(CellField(m, np.array([1.0, -1.0, 1.0, 1.0])), 10, 0)
    with pytest.raises(ValueError):
        sample_initial(CellField(m, np.zeros(4)), 10, 0)
    with pytest.raises(ValueError):
        sample_initial(rho, 0, 0)


def test_zero_field_freezes_particles():
    m = unit_torus(8)
    rho = CellField(m, np.ones((8, 8)))
    sim = simulate(rho, builtin_constant((0.0, 0.0)), m, 1 / 32, 10, 5000, 1, keep_positions=True)
    np.testing.assert_array_equal(sim.positions[0], sim.positions[-1])
    assert not sim.trace.M.any() and not sim.trace.sup.any()
    assert sim.xi_max.max() == 0
    assert sim.moment_constant() == 0.0


def test_mean_increment_equals_drift():
    n = 16
    h = 1 / n
    m = build_mesh(1, 1.0, n)
    dt = h / 4
    M = 200_000
    sim = simulate(CellField(m, np.ones(n)), builtin_constant((1.0,)), m, dt, 8, M, 11, keep_positions=True)
    step = sim.positions[1] - sim.positions[0]
    sigma = step.std() / math.sqrt(M)
    assert abs(step.mean() - dt) <= 3 * sigma
    total = sim.positions[-1] - sim.positions[0]
    assert abs(total.mean() - 8 * dt) <= 3 * total.std() / math.sqrt(M)
    # xi removes the drift exactly
    np.testing.assert_allclose(sim.trace.M[:, 0], total[:, 0] - 8 * dt, atol=1e-12)


@pytest.mark.parametrize("name", ["constant", "sobolev"])
def test_increment_bound_and_centering(name):
    u = builtin_constant((0.0, 1.0)) if name == "constant" else builtin_sobolev_shear()
    m = unit_torus(8)
    rho = CellField(m, np.random.default_rng(0).random((8, 8)) + 0.1)
    sim = simulate(rho, u, m, 1 / 32, 12, 200_000, 4)
    assert sim.xi_bound_ok
    assert sim.xi_max.max() <= 4 * m.h
    scores = sim.centering_scores()
    assert np.nanmax(scores) < 4.5
    assert 0 < sim.moment_constant() < 4


def test_simulation_deterministic_and_size_independent():
    m = unit_torus(8)
    rho = CellField(m, np.random.default_rng(1).random((8, 8)))
    u = builtin_sobolev_shear()
    a = simulate(rho, u, m, 1 / 32, 6, 2000, 9)
    b = simulate(rho, u, m, 1 / 32, 6, 2000, 9)
    c = simulate(rho, u, m, 1 / 32, 6, 1000, 9)
    d = simulate(rho, u, m, 1 / 32, 6, 2000, 10)
    np.testing.assert_array_equal(a.ensemble.positions, b.ensemble.positions)
    np.testing.assert_array_equal(a.ensemble.positions[:1000], c.ensemble.positions)
    assert not np.array_equal(a.ensemble.positions, d.ensemble.positions)


def test_simulation_thread_count_does_not_change_paths():
    m = unit_torus(8)
    rho = CellField(m, np.ones((8, 8)))
    a = simulate(rho, builtin_sobolev_shear(), m, 1 / 32, 5, 5000, 2, threads=1)
    b = simulate(rho, builtin_sobolev_shear(), m, 1 / 32, 5, 5000, 2, threads=4)
    np.testing.assert_array_equal(a.ensemble.positions, b.ensemble.positions)


def test_simulate_validation():
    m = unit_torus(4)
    with pytest.raises(ValueError):
        simulate(CellField(m, -np.ones((4, 4))), builtin_sobolev_shear(), m, 1 / 16, 2, 10, 0)
    with pytest.raises(ValueError):
        simulate(CellField(unit_torus(5), np.ones((5, 5))), builtin_sobolev_shear(), m, 1 / 16, 2, 10, 0)
    with pytest.raises(ValueError):
        simulate(CellField(m, np.ones((4, 4))), builtin_sobolev_shear(), m, 1 / 16, -1, 10, 0)


def test_law_check_one_dimensional_two_steps():
    m = build_mesh(1, 1.0, 8)
    dt = 1 / 16
    rho = CellField(m, np.eye(8)[3] * 8)
    traj = run(rho, builtin_constant((1.0,)), m, dt, 2 * dt)
    np.testing.assert_allclose(traj[-1].values[3:6] / 8, [0.25, 0.5, 0.25], rtol=1e-15)
    sim = simulate(rho, builtin_constant((1.0,)), m, dt, 2, 100_000, 8, histograms=True)
    law = empirical_law_check(sim, traj)
    assert law.passed, str(law)
    np.testing.assert_allclose(sim.histograms[-1][3:6], [0.25, 0.5, 0.25], atol=0.01)


def test_law_check_detects_wrong_law():
    m = build_mesh(1, 1.0, 8)
    dt = 1 / 16
    rho = CellField(m, np.eye(8)[3] * 8)
    sim = simulate(rho, builtin_constant((1.0,)), m, dt, 2, 100_000, 8, histograms=True)
    wrong = run(rho, builtin_constant((0.5,)), m, dt, 2 * dt)
    assert not empirical_law_check(sim, wrong).passed


def test_law_check_rejects_mismatched_inputs():
    m = unit_torus(4)
    rho = CellField(m, np.ones((4, 4)))
    u = builtin_constant((0.0, 1.0))
    sim = simulate(rho, u, m, 1 / 16, 2, 100, 0, histograms=True)
    with pytest.raises(ValueError):
        empirical_law_check(sim, run(rho, u, m, 1 / 16, 1 / 16))
    m5 = unit_torus(5)
    with pytest.raises(ValueError):
        empirical_law_check(sim, run(CellField(m5, np.ones((5, 5))), u, m5, 1 / 20, 2 / 20))
    with pytest.raises(ValueError):
        empirical_law_check(simulate(rho, u, m, 1 / 16, 2, 100, 0), run(rho, u, m, 1 / 16, 2 / 16))


def test_tv_band_covers_sampling_noise():
    rng = np.random.default_rng(3)
    p = rng.random(64)
    p /= p.sum()
    M = 10_000
    band = tv_band(p, M)
    tv = [0.5 * np.abs(rng.multinomial(M, p) / M - p).sum() for _ in range(400)]
    assert np.mean(np.array(tv) > band) < 0.01


def test_martingale_scaling_synthetic():
    traces = []
    for k in range(4, 9):
        h = 2.0 ** -k
        tr = MartingaleTrace.zeros(h, 10, 2)
        tr.sup[:] = 3 * math.sqrt(h)
        traces.append(tr)
    res = martingale_scaling(traces)
    assert res.slope == pytest.approx(0.5, abs=1e-12)
    assert not res.degenerate


def test_martingale_scaling_degenerate_and_validation():
    zero = [MartingaleTrace.zeros(2.0 ** -k, 10, 2) for k in range(3, 6)]
    assert martingale_scaling(zero).degenerate
    with pytest.raises(ValueError):
        martingale_scaling(zero[:2])
    with pytest.raises(ValueError):
        martingale_scaling([zero[0], zero[0], zero[1]])


def test_law_check_zero_field_is_sampling_noise():
    m = unit_torus(8)
    rho = CellField(m, np.random.default_rng(2).random((8, 8)) + 0.1)
    u = builtin_constant((0.0, 0.0))
    sim = simulate(rho, u, m, 1 / 32, 4, 100_000, 12, histograms=True)
    law = empirical_law_check(sim, run(rho, u, m, 1 / 32, 4 / 32))
    assert law.passed
    assert np.max(law.tv) < 10 / math.sqrt(100_000) * math.sqrt(64)


def test_law_check_passes_for_shear_field():
    m = unit_torus(8)
    rho = CellField(m, np.random.default_rng(3).random((8, 8)) + 0.1)
    u = builtin_sobolev_shear()
    sim = simulate(rho, u, m, 1 / 32, 16, 200_000, 13, histograms=True)
    law = empirical_law_check(sim, run(rho, u, m, 1 / 32, 16 / 32))
    assert law.passed, str(law)
