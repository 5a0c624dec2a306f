"""Strang split-step Fourier propagator for the lattice Schrödinger equation.

``exp(-i V dt/2) exp(-i T dt) exp(-i V dt/2)``: unitary by construction,
second order in ``dt``.  Arrays with leading batch axes are propagated
row-wise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .state import LatticeGrid, WaveFunction


class UnstableTimestepError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """``H = p^2 / 2 mass + V(x)``.  ``mass = inf`` drops the kinetic term."""
    mass: float
    potential: np.ndarray
    hbar: float = 1.0

    def __post_init__(self):
        v = np.array(self.potential, dtype=float)
        if v.ndim != 1:
            raise ValueError("potential must be a 1-D array")
        if not np.all(np.isfinite(v)):
            raise ValueError("potential values must be finite")
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not self.hbar > 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")
        v.setflags(write=False)
        object.__setattr__(self, "potential", v)

    @classmethod
    def free(cls, grid: LatticeGrid, mass: float = 1.0, hbar: float = 1.0) -> "HamiltonianSpec":
        return cls(mass, np.zeros(grid.n_sites), hbar)

    @classmethod
    def harmonic(cls, grid: LatticeGrid, omega: float = 1.0, mass: float = 1.0,
                 x0: float = 0.0, hbar: float = 1.0) -> "HamiltonianSpec":
        return cls(mass, 0.5 * mass * omega**2 * (grid.x - x0) ** 2, hbar)

    @classmethod
    def zero(cls, grid: LatticeGrid) -> "HamiltonianSpec":
        """``H = 0``: no evolution between collapse events."""
        return cls(math.inf, np.zeros(grid.n_sites))

    @property
    def is_zero(self) -> bool:
        return math.isinf(self.mass) and not np.any(self.potential)

    def kinetic_energies(self, grid: LatticeGrid) -> np.ndarray:
        if math.isinf(self.mass):
            return np.zeros(grid.n_sites)
        return self.hbar**2 * grid.k**2 / (2 * self.mass)

    def __eq__(self, other):
        if not isinstance(other, HamiltonianSpec):
            return NotImplemented
        return (self.mass == other.mass and self.hbar == other.hbar
                and np.array_equal(self.potential, other.potential))

    __hash__ = None


def dt_max(grid: LatticeGrid, h: HamiltonianSpec) -> float:
    """Largest accepted step: total phase range per step at most pi."""
    _check_potential(grid, h)
    e_kin = 0.0 if math.isinf(h.mass) else h.hbar**2 * (np.pi / grid.dx) ** 2 / (2 * h.mass)
    spread = e_kin + float(np.ptp(h.potential))
    return math.inf if spread == 0 else math.pi * h.hbar / spread


def _check_potential(grid, h):
    if h.potential.shape != (grid.n_sites,):
        raise ValueError(f"potential has {h.potential.size} entries, grid has {grid.n_sites}")


class SplitStepPropagator:
    """Cached phase factors for one ``(grid, H, dt)`` triple."""

    def __init__(self, grid: LatticeGrid, h: HamiltonianSpec, dt: float):
        if not dt > 0:
            raise UnstableTimestepError(f"dt must be positive, got {dt}")
        bound = dt_max(grid, h)
        if dt > bound * (1 + 1e-12):
            raise UnstableTimestepError(f"dt={dt} exceeds stability bound dt_max={bound}")
        self.grid = grid
        self.h = h
        self.dt = dt
        self.identity = h.is_zero
        self._half_v = np.exp(-0.5j * dt * h.potential / h.hbar)
        self._kin = np.exp(-1j * dt * h.kinetic_energies(grid) / h.hbar)
        self._has_v = bool(np.any(h.potential))
        self._has_t = not math.isinf(h.mass)

    def __call__(self, amps: np.ndarray) -> np.ndarray:
        if self.identity:
            return amps.copy()
        out = amps * self._half_v if self._has_v else amps
        if self._has_t:
            out = np.fft.ifft(np.fft.fft(out, axis=-1) * self._kin, axis=-1)
        if self._has_v:
            out = out * self._half_v
        return out


def step_unitary(psi: WaveFunction, h: HamiltonianSpec, dt: float) -> WaveFunction:
    return psi.with_amplitudes(SplitStepPropagator(psi.grid, h, dt)(psi.amplitudes))


def step_schedule(t_span: float, dt: float) -> tuple[int, float]:
    """Number of full steps and the final partial step landing on ``t_span``."""
    if t_span < 0:
        raise ValueError(f"t_span must be non-negative, got {t_span}")
    if t_span == 0:
        return 0, 0.0
    n_full = int(math.floor(t_span / dt))
    rest = t_span - n_full * dt
    if rest <= 1e-12 * max(t_span, dt):
        rest = 0.0
    if rest >= dt * (1 - 1e-12):
        n_full += 1
        rest = 0.0
    return n_full, rest


def evolve_amplitudes(amps: np.ndarray, grid: LatticeGrid, h: HamiltonianSpec,
                      t_span: float, dt: float, cache: dict | None = None) -> np.ndarray:
    n_full, rest = step_schedule(t_span, dt)
    if n_full == 0 and rest == 0.0 or h.is_zero:
        return amps.copy()
    cache = {} if cache is None else cache
    out = amps
    if n_full:
        prop = cache.get(dt) or cache.setdefault(dt, SplitStepPropagator(grid, h, dt))
        for _ in range(n_full):
            out = prop(out)
    if rest:
        out = SplitStepPropagator(grid, h, rest)(out)
    return out


def evolve_unitary(psi: WaveFunction, h: HamiltonianSpec, t_span: float,
                   dt: float) -> WaveFunction:
    """``ceil(t_span/dt)`` steps; the last one is shortened to land on ``t_span``."""
    if not dt > 0:
        raise UnstableTimestepError(f"dt must be positive, got {dt}")
    return psi.with_amplitudes(evolve_amplitudes(psi.amplitudes, psi.grid, h, t_span, dt))


def energy(psi: WaveFunction, h: HamiltonianSpec) -> float:
    """``<H>`` of the lattice Hamiltonian, normalized by ``<psi|psi>``."""
    grid = psi.grid
    phi = np.fft.fft(psi.amplitudes)
    w = np.abs(phi) ** 2
    kinetic = np.sum(w * h.kinetic_energies(grid)) / np.sum(w)
    rho = psi.density
    potential = np.sum(rho * h.potential) / np.sum(rho)
    return float(kinetic + potential)
