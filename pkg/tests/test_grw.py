import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from collapsesim.grw import (CollapsedToZeroError, apply_jump, apply_jump_to_pair,
                             coherence_decay_rate, collapse_once, effective_rate,
                             jump_probability_density, run_grw_trajectory, sample_jump_center,
                             sample_jump_times)
from collapsesim.observables import count_lobes
from collapsesim.propagator import HamiltonianSpec, evolve_unitary
from collapsesim.seeding import trajectory_rng
from collapsesim.state import (CollapseParams, LatticeGrid, WaveFunction, make_cat, make_delta,
                               make_gaussian_packet, normalize, superpose)

GRID = LatticeGrid.centered(256, 0.1)


def test_effective_rate():
    assert effective_rate(CollapseParams(1e-17)) == 1e-17
    assert effective_rate(CollapseParams(1e-17, n_nucleons=10**18)) == pytest.approx(10.0)
    assert effective_rate(CollapseParams(0.0)) == 0.0


def test_jump_times_empty_at_zero_rate():
    assert sample_jump_times(0.0, 10.0, np.random.default_rng(0)).size == 0


def test_jump_times_poisson_mean():
    rng = np.random.default_rng(1)
    counts = np.array([sample_jump_times(5.0, 1000.0, rng).size for _ in range(1000)])
    assert abs(counts.mean() - 5000) < 3 * math.sqrt(5000)
    # oracle: the mean of 1000 Poisson(5000) counts has standard error sqrt(5)
    assert abs(counts.mean() - 5000) < 4 * math.sqrt(5000 / 1000)


def test_jump_time_gaps_are_exponential():
    times = sample_jump_times(5.0, 2100.0, np.random.default_rng(2))
    gaps = np.diff(np.concatenate([[0.0], times]))[:10_000]
    assert gaps.size == 10_000
    res = stats.kstest(gaps, "expon", args=(0, 1 / 5.0))
    assert res.statistic < 1.358 / math.sqrt(gaps.size)


def test_jump_times_sorted_and_bounded():
    t = sample_jump_times(50.0, 3.0, np.random.default_rng(3))
    assert np.all(np.diff(t) > 0) and t[0] > 0 and t[-1] <= 3.0


def test_jump_density_on_delta_matches_closed_form():
    q0 = 100
    p = jump_probability_density(make_delta(GRID, q0), 1.0)
    d = GRID.periodic_distance(GRID.x, GRID.x[q0])
    expected = np.exp(-d**2) / math.sqrt(math.pi)
    np.testing.assert_allclose(p, expected, rtol=1e-10, atol=1e-15)
    assert int(np.argmax(p)) == q0


def test_jump_density_symmetric_for_cat():
    p = jump_probability_density(make_cat(GRID, 10.0, 1.0), 1.0)
    mirrored = p[(-np.arange(GRID.n_sites)) % GRID.n_sites]
    assert np.max(np.abs(p - mirrored)) < 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.3, 3.0))
def test_completeness_for_random_states(seed, r_c):
    rng = np.random.default_rng(seed)
    amps = rng.normal(size=GRID.n_sites) + 1j * rng.normal(size=GRID.n_sites)
    psi = normalize(WaveFunction(GRID, amps))
    assert abs(jump_probability_density(psi, r_c).sum() * GRID.dx - 1) < 1e-8


def _amplitude_width_gaussian(grid, width):
    """exp(-x^2 / 2 width^2), i.e. ``width`` measured on the amplitude."""
    return normalize(WaveFunction(grid, np.exp(-grid.x**2 / (2 * width**2))))


def test_jump_on_gaussian_product_rule():
    # amplitude-width convention: width r_c times the jump profile gives r_c/sqrt(2)
    out = apply_jump(_amplitude_width_gaussian(GRID, 1.0), 0.0, 1.0)
    expected = _amplitude_width_gaussian(GRID, 1 / math.sqrt(2))
    assert out.var_x() == pytest.approx(expected.var_x(), rel=1e-2)
    assert math.sqrt(2 * out.var_x()) == pytest.approx(1 / math.sqrt(2), rel=1e-2)
    # density-std convention of make_gaussian_packet: Var 1 becomes Var 1/3
    out = apply_jump(make_gaussian_packet(GRID, 0.0, 1.0), 0.0, 1.0)
    assert out.var_x() == pytest.approx(1 / 3, rel=1e-2)


def test_jump_on_cat_selects_lobe():
    out = apply_jump(make_cat(GRID, 10.0, 1.0), 5.0, 1.0)
    assert out.lobe_masses()[1] > 0.999


def test_jump_on_flat_state_gives_profile():
    flat = normalize(WaveFunction(GRID, np.ones(GRID.n_sites)))
    out = apply_jump(flat, 0.0, 1.5)
    assert out.var_x() == pytest.approx(1.5**2 / 2, rel=1e-2)


def test_jump_errors():
    psi = make_delta(GRID, 0)
    with pytest.raises(CollapsedToZeroError):
        apply_jump(psi, 0.0, 0.1)
    with pytest.raises(ValueError):
        apply_jump(psi, 100.0, 1.0)


def test_sampled_centres_follow_density():
    psi = make_cat(GRID, 10.0, 1.0, (0.36, 0.64))
    rng = np.random.default_rng(5)
    centres = np.array([sample_jump_center(psi, 1.0, rng) for _ in range(4000)])
    frac = np.mean(centres > 0)
    assert abs(frac - 0.64) < 3 * math.sqrt(0.36 * 0.64 / 4000)


def test_zero_rate_trajectory_equals_unitary_bitwise():
    h = HamiltonianSpec.free(GRID)
    psi = make_gaussian_packet(GRID, 0.0, 1.0, k0=1.0)
    res = run_grw_trajectory(psi, h, CollapseParams(0.0), 1.3, 5e-3, trajectory_rng(0, 0))
    assert res.jumps == []
    assert res.final_state == evolve_unitary(psi, h, 1.3, 5e-3)


def test_trajectory_collapses_cat_and_is_deterministic():
    g = LatticeGrid.centered(128, 0.2)
    psi = make_cat(g, 10.0, 1.0)
    h = HamiltonianSpec.zero(g)
    params = CollapseParams(5.0)
    for k in range(5):
        res = run_grw_trajectory(psi, h, params, 2.0, 0.01, trajectory_rng(3, k))
        assert res.n_jumps >= 1
        assert min(res.final_state.lobe_masses()) < 1e-4
        times = [j.time for j in res.jumps]
        assert all(a < b for a, b in zip(times, times[1:]))
        assert 0 <= times[0] and times[-1] <= 2.0
        assert all(abs(j.pre_jump_norm_sq - 1) < 1e-6 for j in res.jumps)
        again = run_grw_trajectory(psi, h, params, 2.0, 0.01, trajectory_rng(3, k))
        assert again == res


def test_samples_record_observables():
    g = LatticeGrid.centered(128, 0.2)
    psi = make_gaussian_packet(g, 0.0, 1.0, k0=1.0)
    res = run_grw_trajectory(psi, HamiltonianSpec.free(g), CollapseParams(0.0), 1.0, 0.01,
                             trajectory_rng(0, 1), sample_times=[0.0, 0.5, 1.0])
    np.testing.assert_allclose(res.observables_series["mean_x"], [0.0, 0.5, 1.0], atol=1e-6)
    with pytest.raises(ValueError):
        run_grw_trajectory(psi, HamiltonianSpec.free(g), CollapseParams(0.0), 1.0, 0.01,
                           trajectory_rng(0, 1), sample_times=[0.5, 0.2])


def test_amplification_doubles_jump_count():
    g = LatticeGrid.centered(64, 0.5)
    psi = make_gaussian_packet(g, 0.0, 2.0)
    h = HamiltonianSpec.zero(g)
    means = []
    for n in (1, 2):
        counts = [run_grw_trajectory(psi, h, CollapseParams(1.0, n_nucleons=n), 4.0, 4.0,
                                     trajectory_rng(10 + n, k)).n_jumps for k in range(600)]
        means.append(np.mean(counts))
    ratio = means[1] / means[0]
    # delta-method sigma of the ratio of two Poisson sample means
    sigma = ratio * math.sqrt(1 / (600 * 4.0) + 1 / (600 * 8.0))
    assert abs(ratio - 2) < 3 * sigma


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-8.5, 8.5), min_size=1, max_size=4), st.integers(0, 2**32 - 1))
def test_jump_never_adds_lobes(centres, seed):
    g = LatticeGrid.centered(256, 0.1)
    rng = np.random.default_rng(seed)
    psi = make_gaussian_packet(g, centres[0], 1.0)
    for c in centres[1:]:
        psi = superpose(1.0, psi, rng.uniform(0.3, 1.0), make_gaussian_packet(g, c, 1.0))
    before = count_lobes(psi)
    after, _ = collapse_once(psi, 1.0, rng)
    assert count_lobes(after) <= before


def test_pair_jump_localizes_partner():
    g = LatticeGrid.centered(128, 0.2)
    left = make_gaussian_packet(g, -5.0, 1.0).amplitudes
    right = make_gaussian_packet(g, 5.0, 1.0).amplitudes
    pair = (np.outer(left, left) + np.outer(right, right)) / math.sqrt(2)
    out = apply_jump_to_pair(pair, g, 5.0, 1.0, particle=0)
    marginal_2 = np.sum(np.abs(out) ** 2, axis=0) * g.dx**2
    assert marginal_2[g.x >= 0].sum() > 0.999
    product = np.outer(left + right, left + right) / 2
    out = apply_jump_to_pair(product, g, 5.0, 1.0, particle=0)
    marginal_2 = np.sum(np.abs(out) ** 2, axis=0) * g.dx**2
    assert marginal_2[g.x >= 0].sum() == pytest.approx(0.5, abs=1e-6)


def test_grw_decay_rate():
    assert coherence_decay_rate(CollapseParams(2.0, n_nucleons=3), 10.0) == \
        pytest.approx(6.0 * (1 - math.exp(-25)))
    assert coherence_decay_rate(CollapseParams(1.0), 0.0) == 0.0
