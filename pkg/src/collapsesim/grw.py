"""GRW spontaneous localization: Poisson-timed Gaussian jumps between unitary segments."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kernels import CircularKernel, periodic_gaussian
from .observables import SERIES_NAMES, LobeTemplates, observe
from .propagator import HamiltonianSpec, evolve_amplitudes
from .state import CollapseParams, WaveFunction, norm_squared


class CollapsedToZeroError(RuntimeError):
    pass


@dataclass(frozen=True)
class JumpEvent:
    time: float
    center: float
    pre_jump_norm_sq: float
    lobe_label: Optional[int] = None


@dataclass(eq=False)
class TrajectoryResult:
    final_state: WaveFunction
    jumps: list[JumpEvent]
    sample_times: np.ndarray
    observables_series: dict[str, np.ndarray] = field(default_factory=dict)
    norm_corrections: Optional[np.ndarray] = None

    @property
    def n_jumps(self) -> int:
        return len(self.jumps)

    def __eq__(self, other):
        if not isinstance(other, TrajectoryResult):
            return NotImplemented
        if self.jumps != other.jumps or self.final_state != other.final_state:
            return False
        if not np.array_equal(self.sample_times, other.sample_times):
            return False
        if self.observables_series.keys() != other.observables_series.keys():
            return False
        return all(np.array_equal(v, other.observables_series[k], equal_nan=True)
                   for k, v in self.observables_series.items())


def effective_rate(params: CollapseParams) -> float:
    """Collapse rate of the whole composite: ``n_nucleons * lambda``."""
    return params.n_nucleons * params.lambda_rate


def sample_jump_times(rate: float, t_final: float, rng: np.random.Generator) -> np.ndarray:
    """Event times of a homogeneous Poisson process on ``(0, t_final]``.

    Exponential gaps are drawn in blocks; the stream consumed depends only on
    ``rate`` and ``t_final``.
    """
    if rate < 0:
        raise ValueError(f"rate must be non-negative, got {rate}")
    if not t_final > 0:
        raise ValueError(f"t_final must be positive, got {t_final}")
    if rate == 0:
        return np.empty(0)
    block = max(16, int(rate * t_final * 1.1) + 16)
    chunks = []
    t = 0.0
    while True:
        times = t + np.cumsum(rng.exponential(1.0 / rate, size=block))
        inside = times[times <= t_final]
        chunks.append(inside)
        if inside.size < block:
            break
        t = times[-1]
    return np.concatenate(chunks)


def jump_kernel(grid, r_c: float) -> CircularKernel:
    """``(pi r_c^2)^(-1/2) exp(-d^2 / r_c^2)``, i.e. ``|L(x)|^2`` as a kernel."""
    return CircularKernel(grid, periodic_gaussian(grid, r_c**2 / 2))


def jump_probability_density(psi: WaveFunction, r_c: float,
                             kernel: Optional[CircularKernel] = None) -> np.ndarray:
    """``p(x_i) = ||L(x_i) psi||^2`` on every site; sums to ``norm^2`` with weight ``dx``."""
    kernel = kernel or jump_kernel(psi.grid, r_c)
    return np.maximum(kernel.convolve(psi.density), 0.0)


def apply_jump(psi: WaveFunction, center: float, r_c: float) -> WaveFunction:
    grid = psi.grid
    if not (grid.x_min <= center <= grid.x_min + grid.length):
        raise ValueError(f"jump center {center} outside grid")
    d = grid.periodic_distance(grid.x, center)
    amps = np.exp(-(d**2) / (2 * r_c**2)) * psi.amplitudes
    n2 = float(np.sum(np.abs(amps) ** 2) * grid.dx)
    if n2 < 1e-24:
        raise CollapsedToZeroError(
            f"jump at {center} left norm {math.sqrt(n2):.3g}; centers must be drawn from p(x)")
    return psi.with_amplitudes(amps / math.sqrt(n2))


def sample_jump_center(psi: WaveFunction, r_c: float, rng: np.random.Generator,
                       kernel: Optional[CircularKernel] = None) -> float:
    """Inverse-CDF draw of a lattice site from the discrete jump density."""
    p = jump_probability_density(psi, r_c, kernel)
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    idx = min(int(np.searchsorted(cdf, u, side="right")), psi.grid.n_sites - 1)
    return float(psi.grid.x[idx])


def collapse_once(psi: WaveFunction, r_c: float, rng: np.random.Generator,
                  time: float = 0.0, lobes: Optional[LobeTemplates] = None,
                  kernel: Optional[CircularKernel] = None) -> tuple[WaveFunction, JumpEvent]:
    """Draw one jump center and localize ``psi`` there."""
    pre = norm_squared(psi)
    center = sample_jump_center(psi, r_c, rng, kernel)
    label = lobes.label(center) if lobes is not None else None
    return apply_jump(psi, center, r_c), JumpEvent(time, center, pre, label)


def _check_normalized(psi):
    n2 = norm_squared(psi)
    if abs(n2 - 1) > 1e-6:
        raise ValueError(f"initial state must be normalized, norm^2={n2}")


def _sample_times(sample_times, t_final):
    if sample_times is None:
        return np.array([0.0, t_final])
    st = np.asarray(sample_times, dtype=float)
    if st.ndim != 1 or np.any(np.diff(st) < 0) or st.size and (st[0] < 0 or st[-1] > t_final):
        raise ValueError("sample_times must be sorted within [0, t_final]")
    return st


def run_grw_trajectory(psi0: WaveFunction, h: HamiltonianSpec, params: CollapseParams,
                       t_final: float, dt: float, rng: np.random.Generator,
                       sample_times=None, lobes: Optional[LobeTemplates] = None
                       ) -> TrajectoryResult:
    """Unitary evolution interrupted by jumps at Poisson times of rate ``N lambda``.

    All jump times are drawn first, then jump centers in time order.
    Evolution is advanced exactly to every jump and sample time.
    """
    _check_normalized(psi0)
    grid = psi0.grid
    st = _sample_times(sample_times, t_final)
    jump_times = sample_jump_times(effective_rate(params), t_final, rng)
    kernel = jump_kernel(grid, params.r_c) if jump_times.size else None
    series = {name: np.empty(st.size) for name in SERIES_NAMES}

    cache: dict = {}
    psi = psi0
    t = 0.0
    jumps: list[JumpEvent] = []
    ji = si = 0
    while ji < jump_times.size or si < st.size:
        # samples at a jump time are recorded before the jump
        if si < st.size and (ji >= jump_times.size or st[si] <= jump_times[ji]):
            t_next, is_jump = st[si], False
        else:
            t_next, is_jump = jump_times[ji], True
        if t_next > t:
            psi = psi.with_amplitudes(
                evolve_amplitudes(psi.amplitudes, grid, h, t_next - t, dt, cache))
            t = t_next
        if is_jump:
            psi, event = collapse_once(psi, params.r_c, rng, t, lobes, kernel)
            jumps.append(event)
            ji += 1
        else:
            for name, value in observe(psi.amplitudes, grid, lobes).items():
                series[name][si] = value
            si += 1
    if t < t_final:
        psi = psi.with_amplitudes(
            evolve_amplitudes(psi.amplitudes, grid, h, t_final - t, dt, cache))
    return TrajectoryResult(psi, jumps, st, series)


def coherence_decay_rate(params: CollapseParams, separation: float) -> float:
    """Averaged GRW decay of the coherence between points ``separation`` apart.

    Each jump multiplies ``rho(q, q')`` by ``exp(-(q-q')^2 / 4 r_c^2)`` on
    average, so the rate is ``N lambda (1 - exp(-d^2 / 4 r_c^2))``.
    """
    return effective_rate(params) * (1 - math.exp(-separation**2 / (4 * params.r_c**2)))


def apply_jump_to_pair(amps: np.ndarray, grid, center: float, r_c: float,
                       particle: int) -> np.ndarray:
    """Localize one coordinate of a two-particle amplitude ``psi(x1, x2)``.

    ``amps[i, j]`` is the amplitude at ``(x_i, x_j)``; the result is
    renormalized with weight ``dx**2``.
    """
    d = grid.periodic_distance(grid.x, center)
    prof = np.exp(-(d**2) / (2 * r_c**2))
    out = amps * (prof[:, None] if particle == 0 else prof[None, :])
    n2 = float(np.sum(np.abs(out) ** 2) * grid.dx**2)
    if n2 < 1e-24:
        raise CollapsedToZeroError(f"jump at {center} annihilated the pair state")
    return out / math.sqrt(n2)
