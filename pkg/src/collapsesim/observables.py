"""Per-state observables and the two-lobe reduced description."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .state import LatticeGrid, WaveFunction, normalize

SERIES_NAMES = ("mean_x", "var_x", "mass_left", "mass_right", "rho_lr_re", "rho_lr_im")


class DegenerateLobesError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LobeTemplates:
    """Two reference lobes frozen at t=0 and the boundary separating them."""
    left: WaveFunction
    right: WaveFunction
    boundary: Optional[float] = None

    def __post_init__(self):
        if self.left.grid != self.right.grid:
            raise ValueError("templates live on different grids")
        left, right = normalize(self.left), normalize(self.right)
        if abs(left.overlap(right)) > 1e-3:
            raise DegenerateLobesError(
                f"template overlap {abs(left.overlap(right)):.3g} exceeds 1e-3")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        if self.boundary is None:
            object.__setattr__(self, "boundary", 0.5 * (left.expect_x() + right.expect_x()))
        right_side = left.grid.x >= self.boundary
        # each template only sees its own half-line, so |rho_LR|^2 <= P_L P_R
        object.__setattr__(self, "_left_probe", np.where(right_side, 0, left.amplitudes.conj()))
        object.__setattr__(self, "_right_probe", np.where(right_side, right.amplitudes.conj(), 0))

    @property
    def grid(self) -> LatticeGrid:
        return self.left.grid

    def label(self, center: float) -> int:
        """0 for the left lobe, 1 for the right."""
        return int(center >= self.boundary)


@dataclass(frozen=True, eq=False)
class TwoLobeDensityMatrix:
    """2x2 density matrix in the {left, right} lobe basis."""
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (2, 2):
            raise ValueError("two-lobe density matrix must be 2x2")
        if not np.allclose(m, m.conj().T, atol=1e-9, rtol=0):
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m).real - 1) > 1e-9:
            raise ValueError(f"density matrix trace {np.trace(m).real} != 1")
        if np.linalg.eigvalsh(m).min() < -1e-9:
            raise ValueError("density matrix has a negative eigenvalue")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_entries(cls, p_left: float, p_right: float, coherence: complex):
        return cls(np.array([[p_left, coherence], [np.conj(coherence), p_right]]))

    @property
    def p_left(self) -> float:
        return float(self.matrix[0, 0].real)

    @property
    def p_right(self) -> float:
        return float(self.matrix[1, 1].real)

    @property
    def coherence(self) -> complex:
        return complex(self.matrix[0, 1])


def trace_distance(a: TwoLobeDensityMatrix, b: TwoLobeDensityMatrix) -> float:
    return float(0.5 * np.abs(np.linalg.eigvalsh(a.matrix - b.matrix)).sum())


def reduce_to_two_lobes(psi: WaveFunction, lobes: LobeTemplates,
                        boundary: Optional[float] = None) -> TwoLobeDensityMatrix:
    """Half-line masses on the diagonal, template projections off it.

    The off-diagonal entry is ``<T_L|psi_L> <psi_R|T_R>`` with ``psi_L``,
    ``psi_R`` the restrictions of ``psi`` to either side of the boundary.
    """
    obs = observe(psi.amplitudes, psi.grid, lobes, boundary)
    return TwoLobeDensityMatrix.from_entries(
        float(obs["mass_left"]), float(obs["mass_right"]),
        complex(obs["rho_lr_re"], obs["rho_lr_im"]))


def observe(amps: np.ndarray, grid: LatticeGrid, lobes: Optional[LobeTemplates] = None,
            boundary: Optional[float] = None) -> dict[str, np.ndarray]:
    """Observables of normalized states, batched over leading axes.

    Without lobe templates the split is at ``boundary`` (default 0) and the
    coherence entries are NaN.
    """
    dx = grid.dx
    x = grid.x
    rho = np.abs(amps) ** 2 * dx
    mean = rho @ x
    var = rho @ x**2 - mean**2
    if boundary is None:
        boundary = lobes.boundary if lobes is not None else 0.0
    right = x >= boundary
    m_right = rho[..., right].sum(axis=-1)
    m_left = rho[..., ~right].sum(axis=-1)
    if lobes is not None:
        c_left = (amps @ lobes._left_probe) * dx
        c_right = (amps @ lobes._right_probe) * dx
        r_lr = c_left * np.conj(c_right)
        re, im = r_lr.real, r_lr.imag
    else:
        re = im = np.full(np.shape(mean), np.nan)
    return {"mean_x": mean, "var_x": np.maximum(var, 0.0), "mass_left": m_left,
            "mass_right": m_right, "rho_lr_re": re, "rho_lr_im": im}


def count_lobes(psi: WaveFunction, threshold: float = 0.01) -> int:
    """Local maxima of ``|psi|^2`` (periodic) above ``threshold`` times the peak."""
    rho = psi.density
    peak = rho.max()
    if peak == 0:
        return 0
    left, right = np.roll(rho, 1), np.roll(rho, -1)
    is_max = (rho > left) & (rho >= right) & (rho > threshold * peak)
    return int(is_max.sum())
