"""Lattice wave functions and the collapse parameter set.

All states live on a uniform periodic 1-D grid.  Amplitudes are stored so
that ``sum(|psi|**2) * dx`` is the norm squared.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

NORM_TOL = 1e-10


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeGrid:
    n_sites: int
    dx: float
    x_min: float

    def __post_init__(self):
        if int(self.n_sites) != self.n_sites or self.n_sites < 8:
            raise ValueError(f"n_sites must be an integer >= 8, got {self.n_sites}")
        if not (self.dx > 0 and math.isfinite(self.dx)):
            raise ValueError(f"dx must be positive, got {self.dx}")
        if not math.isfinite(self.x_min):
            raise ValueError("x_min must be finite")
        object.__setattr__(self, "n_sites", int(self.n_sites))
        object.__setattr__(self, "dx", float(self.dx))
        object.__setattr__(self, "x_min", float(self.x_min))

    @classmethod
    def centered(cls, n_sites: int, dx: float) -> "LatticeGrid":
        """Grid whose periodic cell is ``[-L/2, L/2)`` with ``L = n_sites * dx``."""
        return cls(n_sites, dx, -0.5 * n_sites * dx)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_sites)

    @property
    def x_max(self) -> float:
        return self.x_min + (self.n_sites - 1) * self.dx

    @property
    def length(self) -> float:
        return self.n_sites * self.dx

    @property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order."""
        return 2 * np.pi * np.fft.fftfreq(self.n_sites, d=self.dx)

    def offsets(self) -> np.ndarray:
        """Minimum-image displacement of every site from site 0, in FFT order."""
        i = np.arange(self.n_sites)
        i = np.where(i <= self.n_sites // 2, i, i - self.n_sites)
        return i * self.dx

    def periodic_distance(self, x: np.ndarray, center: float) -> np.ndarray:
        d = np.asarray(x) - center
        return d - self.length * np.round(d / self.length)

    def nearest_site(self, x: float) -> int:
        return int(np.round((x - self.x_min) / self.dx)) % self.n_sites


@dataclass(frozen=True, eq=False)
class WaveFunction:
    grid: LatticeGrid
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.shape != (self.grid.n_sites,):
            raise ValueError(
                f"amplitudes must have shape ({self.grid.n_sites},), got {amps.shape}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def __eq__(self, other):
        if not isinstance(other, WaveFunction):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.amplitudes, other.amplitudes)

    __hash__ = None

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def with_amplitudes(self, amplitudes) -> "WaveFunction":
        return WaveFunction(self.grid, amplitudes)

    def normalized(self) -> "WaveFunction":
        return normalize(self)

    def expect_x(self) -> float:
        return float(np.sum(self.density * self.grid.x) * self.grid.dx / norm_squared(self))

    def var_x(self) -> float:
        p = self.density * self.grid.dx / norm_squared(self)
        x = self.grid.x
        mean = np.sum(p * x)
        return float(np.sum(p * (x - mean) ** 2))

    def expect_k(self) -> float:
        """Spectral momentum expectation, in units of hbar."""
        phi = np.fft.fft(self.amplitudes)
        w = np.abs(phi) ** 2
        return float(np.sum(w * self.grid.k) / np.sum(w))

    def overlap(self, other: "WaveFunction") -> complex:
        _check_same_grid(self, other)
        return complex(np.vdot(self.amplitudes, other.amplitudes) * self.grid.dx)

    def lobe_masses(self, boundary: float = 0.0) -> tuple[float, float]:
        """Probability on either side of ``boundary`` (periodic cell split at its edge)."""
        p = self.density * self.grid.dx
        left = float(np.sum(p[self.grid.x < boundary]))
        right = float(np.sum(p[self.grid.x >= boundary]))
        return left, right


def _check_same_grid(a: WaveFunction, b: WaveFunction):
    if a.grid != b.grid:
        raise GridMismatchError("wave functions live on different grids")


def norm_squared(psi: WaveFunction) -> float:
    return float(np.sum(np.abs(psi.amplitudes) ** 2) * psi.grid.dx)


def normalize(psi: WaveFunction) -> WaveFunction:
    n2 = norm_squared(psi)
    if n2 < 1e-24:
        raise ValueError("cannot normalize a zero vector")
    if n2 == 1.0:
        return psi
    return psi.with_amplitudes(psi.amplitudes / math.sqrt(n2))


def make_gaussian_packet(grid: LatticeGrid, x0: float, sigma: float,
                         k0: float = 0.0) -> WaveFunction:
    """Normalized packet ``exp(-(x-x0)^2 / 4 sigma^2 + i k0 x)``.

    ``sigma`` is the position standard deviation of ``|psi|^2``.
    """
    if sigma < 2 * grid.dx:
        raise ValueError(f"packet too narrow: sigma={sigma} < 2*dx={2 * grid.dx}")
    if not (grid.x_min + 4 * sigma <= x0 <= grid.x_max - 4 * sigma):
        raise ValueError(
            f"packet outside grid: x0={x0} not within "
            f"[{grid.x_min + 4 * sigma}, {grid.x_max - 4 * sigma}]")
    x = grid.x
    amps = np.exp(-((x - x0) ** 2) / (4 * sigma**2) + 1j * k0 * x)
    return normalize(WaveFunction(grid, amps))


def make_delta(grid: LatticeGrid, site: int) -> WaveFunction:
    """Normalized state concentrated on one lattice site."""
    amps = np.zeros(grid.n_sites, dtype=complex)
    amps[site] = 1 / math.sqrt(grid.dx)
    return WaveFunction(grid, amps)


def superpose(a: complex, psi1: WaveFunction, b: complex, psi2: WaveFunction) -> WaveFunction:
    _check_same_grid(psi1, psi2)
    amps = a * psi1.amplitudes + b * psi2.amplitudes
    if math.sqrt(np.sum(np.abs(amps) ** 2) * psi1.grid.dx) < 1e-12:
        raise ValueError("superposition is the zero vector")
    return normalize(psi1.with_amplitudes(amps))


def make_cat(grid: LatticeGrid, separation: float, sigma: float,
             weights: tuple[float, float] = (0.5, 0.5)) -> WaveFunction:
    """Two Gaussian lobes at ``-separation/2`` and ``+separation/2``.

    ``weights`` are the lobe probabilities; amplitudes are their square roots.
    """
    wl, wr = weights
    left = make_gaussian_packet(grid, -separation / 2, sigma)
    right = make_gaussian_packet(grid, separation / 2, sigma)
    return superpose(math.sqrt(wl), left, math.sqrt(wr), right)


def mass_density(psi: WaveFunction, mass: float) -> np.ndarray:
    return mass * np.abs(psi.amplitudes) ** 2


def gamma_from_lambda(lambda_rate: float, r_c: float) -> float:
    """1-D coupling: ``gamma = lambda * sqrt(4 pi r_c^2)``."""
    return lambda_rate * math.sqrt(4 * math.pi * r_c**2)


def gamma_from_lambda_3d(lambda_rate: float, r_c: float) -> float:
    """3-D coupling: ``gamma = lambda * (4 pi r_c^2)^(3/2)``."""
    return lambda_rate * (4 * math.pi * r_c**2) ** 1.5


def lambda_from_gamma_3d(gamma: float, r_c: float) -> float:
    return gamma / (4 * math.pi * r_c**2) ** 1.5


@dataclass(frozen=True)
class CollapseParams:
    """Collapse-model constants.

    ``gamma`` is always derived from ``lambda_rate`` and ``r_c``.  Passing an
    explicit value only serves as a consistency check.  ``mass`` defaults to
    ``n_nucleons * m0``; GRW uses ``n_nucleons`` (count-proportional rate),
    CSL uses ``mass`` (mass-proportional coupling).
    """
    lambda_rate: float
    r_c: float = 1.0
    m0: float = 1.0
    n_nucleons: int = 1
    hbar: float = 1.0
    mass: Optional[float] = None
    gamma: Optional[float] = field(default=None)

    def __post_init__(self):
        problems = validate_collapse_params(
            self.lambda_rate, self.r_c, self.m0, self.n_nucleons, self.hbar,
            self.mass, self.gamma)
        if problems:
            raise ValueError("; ".join(problems))
        if self.mass is None:
            object.__setattr__(self, "mass", self.n_nucleons * self.m0)
        object.__setattr__(self, "gamma", gamma_from_lambda(self.lambda_rate, self.r_c))

    @classmethod
    def from_mass(cls, lambda_rate: float, mass: float, **kwargs) -> "CollapseParams":
        """Composite of given mass; nucleon count is ``round(mass / m0)``."""
        m0 = kwargs.get("m0", 1.0)
        n = max(1, int(round(mass / m0)))
        return cls(lambda_rate, n_nucleons=n, mass=mass, **kwargs)

    def replace(self, **changes) -> "CollapseParams":
        values = dict(lambda_rate=self.lambda_rate, r_c=self.r_c, m0=self.m0,
                      n_nucleons=self.n_nucleons, hbar=self.hbar, mass=self.mass)
        if "n_nucleons" in changes and "mass" not in changes:
            values["mass"] = None
        values.update(changes)
        return CollapseParams(**values)


def validate_collapse_params(lambda_rate, r_c, m0, n_nucleons, hbar, mass=None,
                             gamma=None) -> list[str]:
    """Every violated constraint, as ``field: reason`` strings."""
    problems = []

    def positive(name, value):
        if not isinstance(value, (int, float)) or not math.isfinite(value) or value <= 0:
            problems.append(f"{name}: must be strictly positive, got {value!r}")

    if not isinstance(lambda_rate, (int, float)) or not math.isfinite(lambda_rate) \
            or lambda_rate < 0:
        problems.append(f"lambda_rate: must be non-negative (positivity), got {lambda_rate!r}")
    positive("r_c", r_c)
    positive("m0", m0)
    positive("hbar", hbar)
    if mass is not None:
        positive("mass", mass)
    if not isinstance(n_nucleons, (int, np.integer)) or isinstance(n_nucleons, bool) \
            or n_nucleons < 1:
        problems.append(f"n_nucleons: must be an integer >= 1, got {n_nucleons!r}")
    if gamma is not None and not problems:
        expected = gamma_from_lambda(lambda_rate, r_c)
        if not math.isclose(gamma, expected, rel_tol=1e-9, abs_tol=1e-300):
            problems.append(
                f"gamma: {gamma!r} violates the gamma-lambda relation "
                f"gamma = lambda_rate * sqrt(4 pi r_c^2) = {expected!r}")
    return problems
