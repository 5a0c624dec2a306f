import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from collapsesim.propagator import (HamiltonianSpec, SplitStepPropagator, UnstableTimestepError,
                                    dt_max, energy, evolve_unitary, step_schedule, step_unitary)
from collapsesim.state import LatticeGrid, make_gaussian_packet, norm_squared

GRID = LatticeGrid.centered(512, 0.1)
HGRID = LatticeGrid.centered(256, 0.1)  # keeps the harmonic dt_max above 5e-3


def fidelity(a, b):
    return abs(a.overlap(b))


def test_free_spreading_matches_analytic_width():
    psi = make_gaussian_packet(GRID, 0.0, 1.0)
    out = evolve_unitary(psi, HamiltonianSpec.free(GRID), 2.0, 5e-3)
    assert out.var_x() == pytest.approx(1.0 + (2.0 / 2.0) ** 2, rel=1e-3)


def test_ehrenfest_drift():
    psi = make_gaussian_packet(GRID, -5.0, 1.0, k0=2.0)
    out = evolve_unitary(psi, HamiltonianSpec.free(GRID), 1.0, 5e-3)
    assert out.expect_x() - psi.expect_x() == pytest.approx(2.0, abs=1e-3)


def test_time_reversal_by_conjugation():
    h = HamiltonianSpec.harmonic(HGRID, 0.7)
    psi = make_gaussian_packet(HGRID, 1.0, 1.0, k0=0.5)
    fwd = step_unitary(psi, h, 2e-3)
    back = step_unitary(fwd.with_amplitudes(fwd.amplitudes.conj()), h, 2e-3)
    back = back.with_amplitudes(back.amplitudes.conj())
    assert fidelity(back, psi) == pytest.approx(1.0, abs=1e-9)


def test_zero_span_and_semigroup():
    h = HamiltonianSpec.harmonic(HGRID, 1.0)
    psi = make_gaussian_packet(HGRID, 1.0, 1.0)
    assert evolve_unitary(psi, h, 0.0, 2e-3) == psi
    whole = evolve_unitary(psi, h, 1.0, 2e-3)
    halves = evolve_unitary(evolve_unitary(psi, h, 0.5, 2e-3), h, 0.5, 2e-3)
    assert np.max(np.abs(whole.amplitudes - halves.amplitudes)) < 1e-9


def test_harmonic_period_returns_packet():
    h = HamiltonianSpec.harmonic(HGRID, 1.0)
    psi = make_gaussian_packet(HGRID, 3.0, math.sqrt(0.5))
    out = evolve_unitary(psi, h, 2 * math.pi, 1e-3)
    assert out.expect_x() == pytest.approx(3.0, abs=1e-2)


def test_norm_and_energy_over_long_runs():
    h = HamiltonianSpec.harmonic(HGRID, 0.5)
    psi = make_gaussian_packet(HGRID, 2.0, 1.0, k0=1.0)
    prop = SplitStepPropagator(HGRID, h, 1e-3)
    amps = psi.amplitudes
    for _ in range(10_000):
        amps = prop(amps)
    out = psi.with_amplitudes(amps)
    assert abs(norm_squared(out) - 1) < 1e-8
    e0 = energy(psi, h)
    assert abs(energy(out, h) - e0) / e0 < 1e-6


def test_second_order_convergence():
    h = HamiltonianSpec.harmonic(HGRID, 1.0)
    psi = make_gaussian_packet(HGRID, 2.0, 1.0, k0=1.0)
    ref = evolve_unitary(psi, h, 1.0, 1e-4).amplitudes
    errs = [np.linalg.norm(evolve_unitary(psi, h, 1.0, dt).amplitudes - ref)
            for dt in (4e-3, 2e-3, 1e-3)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)


def test_dt_max_is_enforced():
    h = HamiltonianSpec.free(GRID)
    bound = dt_max(GRID, h)
    assert bound == pytest.approx(math.pi / ((math.pi / 0.1) ** 2 / 2))
    SplitStepPropagator(GRID, h, bound)
    with pytest.raises(UnstableTimestepError):
        SplitStepPropagator(GRID, h, 1.01 * bound)
    with pytest.raises(UnstableTimestepError):
        evolve_unitary(make_gaussian_packet(GRID, 0.0, 1.0), h, 1.0, 0.0)


def test_zero_hamiltonian_is_identity():
    h = HamiltonianSpec.zero(GRID)
    assert dt_max(GRID, h) == math.inf
    psi = make_gaussian_packet(GRID, 0.0, 1.0, k0=1.0)
    assert evolve_unitary(psi, h, 5.0, 1.0) == psi


def test_hamiltonian_validation():
    with pytest.raises(ValueError):
        HamiltonianSpec(1.0, np.array([0.0, np.inf]))
    with pytest.raises(ValueError):
        HamiltonianSpec(-1.0, np.zeros(8))
    with pytest.raises(ValueError):
        dt_max(GRID, HamiltonianSpec(1.0, np.zeros(8)))


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 50), st.floats(1e-4, 1.0))
def test_step_schedule_covers_span(t_span, dt):
    n_full, rest = step_schedule(t_span, dt)
    assert 0 <= rest < dt
    assert n_full * dt + rest == pytest.approx(t_span, rel=1e-12, abs=1e-12)
