import math

import numpy as np
import pytest

from collapsesim.csl import (CSLStepper, SmearingKernel, apply_mass_density_operator,
                             coherence_decay_rate, csl_step, expected_mass_density,
                             lattice_decay_rate, run_csl_ensemble, run_csl_trajectory,
                             sample_wiener_step)
from collapsesim.observables import LobeTemplates
from collapsesim.propagator import HamiltonianSpec, UnstableTimestepError, evolve_unitary, \
    step_unitary
from collapsesim.seeding import trajectory_rng, trajectory_rngs
from collapsesim.state import (CollapseParams, LatticeGrid, make_cat, make_delta,
                               make_gaussian_packet, norm_squared)

GRID = LatticeGrid.centered(128, 0.2)
SMALL = LatticeGrid.centered(64, 0.3)


def test_kernel_normalization_and_shape():
    k = SmearingKernel(GRID, 1.0)
    assert abs(k.lattice_sum - 1) < 1e-8
    assert k.values[0] == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-10)
    assert k.self_overlap == pytest.approx(1 / math.sqrt(4 * math.pi), rel=1e-10)


def test_wiener_increments_variance_and_independence():
    rng = np.random.default_rng(0)
    dt = 1e-3
    draws = np.array([sample_wiener_step(SMALL, dt, rng).increments[:2]
                      for _ in range(100_000)])
    target = dt / SMALL.dx
    n = draws.shape[0]
    assert abs(draws[:, 0].var() - target) < 3 * math.sqrt(2 / n) * target
    cov = np.mean(draws[:, 0] * draws[:, 1])
    assert abs(cov) < 3 * target / math.sqrt(n)


def test_wiener_rejects_zero_dt():
    with pytest.raises(ValueError):
        sample_wiener_step(SMALL, 0.0, np.random.default_rng(0))


def test_mass_operator_on_delta():
    k = SmearingKernel(GRID, 1.0)
    psi = make_delta(GRID, 40)
    out = apply_mass_density_operator(psi, k, 40, 3.0)
    assert out.amplitudes[40] / psi.amplitudes[40] == pytest.approx(
        3.0 / math.sqrt(2 * math.pi), rel=1e-10)


def test_expected_mass_density_integrates_to_mass():
    k = SmearingKernel(GRID, 1.0)
    psi = make_gaussian_packet(GRID, 1.0, 2.0, k0=0.3)
    total = expected_mass_density(psi, k, 2.5).sum() * GRID.dx
    assert total == pytest.approx(2.5 * norm_squared(psi), abs=1e-8)


def test_mass_operator_suppresses_far_lobe():
    k = SmearingKernel(GRID, 1.0)
    cat = make_cat(GRID, 10.0, 1.0)
    out = apply_mass_density_operator(cat, k, GRID.nearest_site(5.0), 1.0)
    ml, mr = out.lobe_masses()
    assert ml / mr < math.exp(-12)


def test_collapse_free_step_equals_unitary():
    h = HamiltonianSpec.free(SMALL)
    psi = make_gaussian_packet(SMALL, 0.0, 1.0, k0=1.0)
    dw = sample_wiener_step(SMALL, 1e-3, np.random.default_rng(1))
    out = csl_step(psi, h, CollapseParams(0.0), SmearingKernel(SMALL, 1.0), 1e-3, dw)
    assert np.max(np.abs(out.amplitudes - step_unitary(psi, h, 1e-3).amplitudes)) < 1e-8


def test_collapse_free_trajectory_equals_unitary():
    h = HamiltonianSpec.free(SMALL)
    psi = make_gaussian_packet(SMALL, 0.0, 1.0, k0=1.0)
    res = run_csl_trajectory(psi, h, CollapseParams(0.0), None, 0.7, 1e-3, trajectory_rng(0, 2))
    ref = evolve_unitary(psi, h, 0.7, 1e-3)
    assert np.max(np.abs(res.final_state.amplitudes - ref.amplitudes)) < 1e-8


def test_cat_is_absorbed_for_every_seed():
    psi = make_cat(SMALL, 10.0, 1.0)
    lobes = LobeTemplates(make_gaussian_packet(SMALL, -5.0, 1.0),
                          make_gaussian_packet(SMALL, 5.0, 1.0))
    _, _, info = run_csl_ensemble(psi, HamiltonianSpec.zero(SMALL), CollapseParams(1.0), 40.0,
                                  1e-3, trajectory_rngs(4, 8), [40.0], lobes, stop_mass=0.99)
    assert not np.any(np.isnan(info["absorbed_at"]))


def test_localized_state_moves_within_noise_bound():
    g = LatticeGrid.centered(256, 0.02)
    psi = make_gaussian_packet(g, 0.0, 0.1)
    params = CollapseParams(1.0)
    k = SmearingKernel(g, 1.0)
    dt = 1e-3
    # E||N psi||^2 = (gamma/m0^2) dt sum_x dx ||(M(x) - <M(x)>) psi||^2
    rho = psi.density
    m_mean = expected_mass_density(psi, k, params.mass)
    spread = sum(np.sum((k.centered_at(i) - m_mean[i]) ** 2 * rho) * g.dx
                 for i in range(g.n_sites)) * g.dx
    bound = math.sqrt(params.gamma / params.m0**2 * dt * spread)
    stepper = CSLStepper(g, HamiltonianSpec.zero(g), params, k, dt)
    rng = np.random.default_rng(3)
    changes, shifts = [], []
    for _ in range(400):
        out, _, _ = stepper.step(psi.amplitudes, rng.standard_normal(g.n_sites))
        changes.append(np.sum(np.abs(out - psi.amplitudes) ** 2) * g.dx)
        shifts.append(psi.with_amplitudes(out).expect_x())
    assert math.sqrt(np.mean(changes)) < 1.2 * bound
    # a packet ten times narrower than r_c barely feels the noise
    assert bound < 0.01
    assert np.std(shifts) < 1e-3


def test_batched_trajectory_matches_single_run():
    psi = make_cat(SMALL, 10.0, 1.0, (0.36, 0.64))
    h = HamiltonianSpec.free(SMALL)
    params = CollapseParams(1.0)
    batch, _, _ = run_csl_ensemble(psi, h, params, 0.3, 1e-3, trajectory_rngs(8, 5), [0.3])
    single, _, _ = run_csl_ensemble(psi, h, params, 0.3, 1e-3, [trajectory_rng(8, 3)], [0.3])
    np.testing.assert_allclose(batch[3], single[0], rtol=0, atol=1e-13)


def test_large_step_is_rejected():
    psi = make_cat(SMALL, 10.0, 1.0)
    with pytest.raises(UnstableTimestepError, match="trajectory"):
        run_csl_ensemble(psi, HamiltonianSpec.zero(SMALL), CollapseParams(1.0), 1.0, 0.05,
                         trajectory_rngs(0, 4), [1.0])


def test_compensated_scheme_defect_is_higher_order():
    psi = make_cat(SMALL, 10.0, 1.0)
    h = HamiltonianSpec.free(SMALL)
    params = CollapseParams(1.0)
    out = {}
    for scheme in ("euler", "compensated"):
        for dt in (2e-4, 1e-4):
            _, _, info = run_csl_ensemble(psi, h, params, 1000 * dt, dt, trajectory_rngs(6, 16),
                                          [1000 * dt], scheme=scheme, check_correction=False)
            out[scheme, dt] = info
    # weak correction per step: O(dt^2) for both schemes, so fixed-count sums scale ~dt^2
    for scheme in ("euler", "compensated"):
        ratio = out[scheme, 2e-4]["weak_correction"].mean() / \
            out[scheme, 1e-4]["weak_correction"].mean()
        assert 3.0 < ratio < 5.0
    # realized per-step defect: O(dt) for euler, O(dt^1.5) compensated
    assert out["compensated", 2e-4]["abs_correction"].mean() < \
        0.1 * out["euler", 2e-4]["abs_correction"].mean()


def test_closed_form_decay_rate():
    p = CollapseParams(2.0, n_nucleons=3)
    expected = 2.0 * 9 * (1 - math.exp(-4.0 / 4))
    assert coherence_decay_rate(p, 2.0) == pytest.approx(expected, rel=1e-12)
    k = SmearingKernel(LatticeGrid.centered(256, 0.1), 1.0)
    assert lattice_decay_rate(p, k, 20) == pytest.approx(expected, rel=1e-8)
