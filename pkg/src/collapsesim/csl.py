"""Continuous spontaneous localization on the lattice.

Itô SDE for the normalized state, single coordinate of composite mass ``m``::

    dpsi = [-(i/hbar) H dt
            + (sqrt(gamma)/m0) sum_x dx (M(x) - <M(x)>) dW(x)
            - (gamma/2 m0^2) sum_x dx (M(x) - <M(x)>)^2 dt] psi

with ``M(x) = m g(q - x)`` diagonal in position and ``Var dW(x) = dt/dx``.
One step updates the collapse terms from the incoming state, renormalizes,
then applies the exact split-step unitary factor.  Two collapse updates are
available:

``euler``
    ``psi * (1 + N - D)``, plain Euler-Maruyama with ``N`` the noise term
    and ``D`` the Itô drift.
``compensated`` (default)
    ``psi * (1 + N - N^2/2)``: the drift's expected quadratic variation
    ``D = E[N^2]/2`` is replaced by the realized one.  Same weak order, but
    the norm defect per step drops from ``O(dt)`` to ``O(dt^(3/2))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .grw import TrajectoryResult, _check_normalized, _sample_times
from .kernels import CircularKernel, periodic_gaussian
from .observables import SERIES_NAMES, LobeTemplates, observe
from .propagator import HamiltonianSpec, SplitStepPropagator, UnstableTimestepError, \
    step_schedule
from .state import CollapseParams, LatticeGrid, WaveFunction

MAX_STEP_CORRECTION = 1e-3
SCHEMES = ("compensated", "euler")


class SmearingKernel(CircularKernel):
    """Smearing profile ``g(x) = exp(-x^2/2 r_c^2) / (sqrt(2 pi) r_c)`` on the ring."""

    def __init__(self, grid: LatticeGrid, r_c: float):
        super().__init__(grid, periodic_gaussian(grid, r_c**2))
        self.r_c = r_c
        self.self_overlap = float(np.sum(self.values**2) * grid.dx)


@dataclass(frozen=True, eq=False)
class WienerField:
    """Per-site increments of one step, each ``Normal(0, dt/dx)``."""
    increments: np.ndarray
    dt: float


def sample_wiener_step(grid: LatticeGrid, dt: float, rng: np.random.Generator) -> WienerField:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return WienerField(rng.standard_normal(grid.n_sites) * math.sqrt(dt / grid.dx), dt)


def apply_mass_density_operator(psi: WaveFunction, kernel: SmearingKernel, x_index: int,
                                mass: float) -> WaveFunction:
    """``(M(x) psi)(q) = mass * g(q - x) * psi(q)``; not normalized."""
    return psi.with_amplitudes(mass * kernel.centered_at(x_index) * psi.amplitudes)


def expected_mass_density(psi: WaveFunction, kernel: SmearingKernel, mass: float) -> np.ndarray:
    """``<M(x)>`` at every site."""
    return mass * kernel.convolve(psi.density)


class CSLStepper:
    """Batched CSL step for a fixed ``(grid, H, params, dt)``.

    ``step`` takes amplitudes of shape ``(..., n_sites)`` and the matching
    unscaled standard-normal draws.
    """

    def __init__(self, grid: LatticeGrid, h: HamiltonianSpec, params: CollapseParams,
                 kernel: SmearingKernel, dt: float, scheme: str = "compensated"):
        if not dt > 0:
            raise UnstableTimestepError(f"dt must be positive, got {dt}")
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
        self.grid = grid
        self.dt = dt
        self.kernel = kernel
        self.scheme = scheme
        self.unitary = SplitStepPropagator(grid, h, dt)
        self.mass = params.mass
        self.noise_coef = math.sqrt(params.gamma) / params.m0
        self.drift_coef = params.gamma / (2 * params.m0**2)
        self.noise_scale = math.sqrt(dt / grid.dx)
        self.collapse_free = params.gamma == 0

    def step(self, amps: np.ndarray, normals: np.ndarray):
        """Returns ``(new_amps, realized_correction, weak_correction)``.

        ``realized_correction`` is ``||psi~||^2 - 1`` before renormalization;
        ``weak_correction`` is its expectation over the step's noise.
        """
        dx = self.grid.dx
        if self.collapse_free:
            zeros = np.zeros(amps.shape[:-1])
            n2 = np.sum(np.abs(amps) ** 2, axis=-1) * dx
            return self._unitary(amps / np.sqrt(n2)[..., None]), n2 - 1, zeros
        m = self.mass
        k = self.kernel
        dw = normals * self.noise_scale
        rho = np.abs(amps) ** 2
        rho_hat = np.fft.rfft(rho, axis=-1)
        m_mean = m * k.convolve_hat(rho_hat)
        centre = np.sum(m_mean * dw, axis=-1) * dx
        noise = self.noise_coef * (m * k.convolve(dw) - centre[..., None])
        # E[noise^2 | psi] = 2 * drift
        spread = (m * m * k.self_overlap
                  - 2 * m * m * k.convolve_hat(rho_hat, power=2)
                  + (np.sum(m_mean**2, axis=-1) * dx)[..., None])
        drift = self.drift_coef * self.dt * spread
        if self.scheme == "euler":
            new = amps * (1.0 + noise - drift)
            weak = np.sum(drift**2 * rho, axis=-1) * dx
        else:
            new = amps * (1.0 + noise - 0.5 * noise**2)
            weak = 3 * np.sum(drift**2 * rho, axis=-1) * dx
        n2 = np.sum(np.abs(new) ** 2, axis=-1) * dx
        new = new / np.sqrt(n2)[..., None]
        return self._unitary(new), n2 - 1, weak

    def _unitary(self, amps):
        return amps if self.unitary.identity else self.unitary(amps)


def csl_step(psi: WaveFunction, h: HamiltonianSpec, params: CollapseParams,
             kernel: SmearingKernel, dt: float, dW: WienerField,
             scheme: str = "compensated") -> WaveFunction:
    """One renormalized step driven by the given Wiener field."""
    _check_normalized(psi)
    if not math.isclose(dW.dt, dt, rel_tol=1e-12):
        raise ValueError("Wiener field was drawn for a different dt")
    stepper = CSLStepper(psi.grid, h, params, kernel, dt, scheme)
    normals = dW.increments / stepper.noise_scale
    amps, realized, _ = stepper.step(psi.amplitudes, normals)
    if abs(realized) > MAX_STEP_CORRECTION:
        raise UnstableTimestepError(
            f"norm correction {realized:.3g} in one step exceeds {MAX_STEP_CORRECTION}")
    return psi.with_amplitudes(amps)


def _step_grid(sample_times: np.ndarray, dt: float) -> list[tuple[int, float]]:
    """Split every sampling interval into full steps and one final partial step."""
    out = []
    prev = 0.0
    for t in sample_times:
        out.append(step_schedule(t - prev, dt))
        prev = t
    return out


def run_csl_ensemble(psi0: WaveFunction, h: HamiltonianSpec, params: CollapseParams,
                     t_final: float, dt: float, rngs: Sequence[np.random.Generator],
                     sample_times=None, lobes: Optional[LobeTemplates] = None,
                     kernel: Optional[SmearingKernel] = None, block: int = 256,
                     stop_mass: Optional[float] = None, check_correction: bool = True,
                     scheme: str = "compensated", index_offset: int = 0):
    """Integrate one trajectory per generator, vectorized over trajectories.

    Each generator supplies ``n_sites`` standard normals per step, in step
    order, so a trajectory's path does not depend on which other
    trajectories share the batch.  With ``stop_mass`` a trajectory is frozen
    once either lobe mass exceeds it (the rest of its noise is still drawn).

    Returns ``(final_amps, series, info)`` where ``series[name]`` has shape
    ``(n_traj, n_samples)`` and ``info`` holds per-trajectory cumulative
    corrections and absorption times.  ``index_offset`` only shifts the
    trajectory numbers quoted in error messages.
    """
    _check_normalized(psi0)
    grid = psi0.grid
    kernel = kernel or SmearingKernel(grid, params.r_c)
    st = _sample_times(sample_times, t_final)
    n_traj = len(rngs)
    n = grid.n_sites
    amps = np.tile(psi0.amplitudes, (n_traj, 1))
    if h.is_zero and not np.any(amps.imag):
        # H = 0 with real noise keeps real amplitudes real
        amps = amps.real.copy()
    series = {name: np.empty((n_traj, st.size)) for name in SERIES_NAMES}
    realized_sum = np.zeros(n_traj)
    realized_abs = np.zeros(n_traj)
    weak_sum = np.zeros(n_traj)
    max_corr = np.zeros(n_traj)
    absorbed_at = np.full(n_traj, np.nan)
    active = np.ones(n_traj, dtype=bool)
    boundary = lobes.boundary if lobes is not None else 0.0
    right_sites = grid.x >= boundary

    steppers: dict[float, CSLStepper] = {}

    def stepper_for(step_dt):
        if step_dt not in steppers:
            steppers[step_dt] = CSLStepper(grid, h, params, kernel, step_dt, scheme)
        return steppers[step_dt]

    # noise is drawn per trajectory in blocks of steps; a full-length dt
    # consumes the same draws as a partial step
    buffer = np.empty((n_traj, 0, n))
    pos = 0

    def next_normals():
        nonlocal buffer, pos
        if pos >= buffer.shape[1]:
            buffer = np.stack([g.standard_normal((block, n)) for g in rngs])
            pos = 0
        out = buffer[:, pos]
        pos += 1
        return out

    t = 0.0
    for si, (n_full, rest) in enumerate(_step_grid(st, dt)):
        for step_dt in [dt] * n_full + ([rest] if rest else []):
            if not active.any():
                break
            normals = next_normals()
            stepper = stepper_for(step_dt)
            if active.all():
                idx = slice(None)
                amps, realized, weak = stepper.step(amps, normals)
            else:
                idx = np.flatnonzero(active)
                new, realized, weak = stepper.step(amps[idx], normals[idx])
                amps[idx] = new
            realized_sum[idx] += realized
            realized_abs[idx] += np.abs(realized)
            weak_sum[idx] += weak
            max_corr[idx] = np.maximum(max_corr[idx], np.abs(realized))
            t += step_dt
            if check_correction and np.any(np.abs(realized) > MAX_STEP_CORRECTION):
                bad = index_offset + np.arange(n_traj)[idx][np.argmax(np.abs(realized))]
                raise UnstableTimestepError(
                    f"trajectory {bad}: norm correction {np.abs(realized).max():.3g} "
                    f"in one step exceeds {MAX_STEP_CORRECTION} at t={t:.6g}")
            if stop_mass is not None:
                rho = np.abs(amps[idx]) ** 2 * grid.dx
                right = rho[:, right_sites].sum(axis=1)
                done = np.flatnonzero((right > stop_mass) | (1 - right > stop_mass))
                hit = np.arange(n_traj)[idx][done]
                absorbed_at[hit] = t
                active[hit] = False
        for name, value in observe(amps, grid, lobes).items():
            series[name][:, si] = value
    info = {"realized_correction": realized_sum, "abs_correction": realized_abs,
            "weak_correction": weak_sum, "max_step_correction": max_corr,
            "absorbed_at": absorbed_at}
    return amps, series, info


def run_csl_trajectory(psi0: WaveFunction, h: HamiltonianSpec, params: CollapseParams,
                       kernel: Optional[SmearingKernel], t_final: float, dt: float,
                       rng: np.random.Generator, sample_times=None,
                       lobes: Optional[LobeTemplates] = None,
                       scheme: str = "compensated") -> TrajectoryResult:
    amps, series, info = run_csl_ensemble(psi0, h, params, t_final, dt, [rng],
                                          sample_times, lobes, kernel, scheme=scheme)
    st = _sample_times(sample_times, t_final)
    return TrajectoryResult(
        psi0.with_amplitudes(amps[0]), [], st,
        {k: v[0] for k, v in series.items()},
        norm_corrections=np.array([info["realized_correction"][0],
                                   info["weak_correction"][0]]))


def coherence_decay_rate(params: CollapseParams, separation: float) -> float:
    """Closed-form lobe decoherence rate under CSL for point-like lobes.

    Averaging the SDE gives ``d rho(q,q')/dt = -Gamma(q-q') rho(q,q')`` with
    ``Gamma(d) = (gamma m^2/m0^2) (G(0) - G(d))`` and
    ``G(d) = int g(y) g(y-d) dy = exp(-d^2/4 r_c^2) / sqrt(4 pi r_c^2)``,
    i.e. ``Gamma = lambda (m/m0)^2 (1 - exp(-d^2/4 r_c^2))``.
    """
    overlap0 = 1 / math.sqrt(4 * math.pi * params.r_c**2)
    overlap_d = overlap0 * math.exp(-separation**2 / (4 * params.r_c**2))
    return params.gamma * (params.mass / params.m0) ** 2 * (overlap0 - overlap_d)


def lattice_decay_rate(params: CollapseParams, kernel: SmearingKernel,
                       separation_sites: int) -> float:
    """Same rate with the overlaps ``G`` summed over the periodic lattice."""
    overlap = kernel.convolve(kernel.values)
    return (params.gamma * (params.mass / params.m0) ** 2
            * float(overlap[0] - overlap[separation_sites % kernel.grid.n_sites]))
