"""Conversion between natural simulation units and CGS.

Simulations use hbar = m0 = r_C = 1.  The derived time unit is
``m0 * r_C**2 / hbar``.
"""
import math
from dataclasses import dataclass

from .state import gamma_from_lambda, gamma_from_lambda_3d

HBAR_CGS = 1.054571817e-27  # erg s
NUCLEON_MASS_G = 1.67262192e-24  # proton mass, g
LAMBDA_CGS = 1e-17  # s^-1
R_C_CGS = 1e-5  # cm

DIMENSIONS = {
    # (length, mass, time) exponents
    "length": (1, 0, 0),
    "mass": (0, 1, 0),
    "time": (0, 0, 1),
    "rate": (0, 0, -1),
    "energy": (2, 1, -2),
    "action": (2, 1, -1),
    "gamma1d": (1, 0, -1),
    "gamma3d": (3, 0, -1),
}


@dataclass(frozen=True)
class UnitSystem:
    hbar: float = HBAR_CGS
    m0: float = NUCLEON_MASS_G
    r_c: float = R_C_CGS

    @property
    def length(self) -> float:
        return self.r_c

    @property
    def mass(self) -> float:
        return self.m0

    @property
    def time(self) -> float:
        return self.m0 * self.r_c**2 / self.hbar

    def scale(self, kind: str) -> float:
        """CGS value of one natural unit of ``kind``."""
        try:
            a, b, c = DIMENSIONS[kind]
        except KeyError:
            raise ValueError(f"unknown quantity kind {kind!r}; "
                             f"choose from {sorted(DIMENSIONS)}") from None
        return self.length**a * self.mass**b * self.time**c

    def to_natural(self, value: float, kind: str) -> float:
        return value / self.scale(kind)

    def to_cgs(self, value: float, kind: str) -> float:
        return value * self.scale(kind)

    def header(self) -> dict:
        return {
            "hbar_erg_s": self.hbar,
            "m0_g": self.m0,
            "r_c_cm": self.r_c,
            "time_unit_s": self.time,
        }


CGS = UnitSystem()


def reference_couplings(lambda_rate: float = LAMBDA_CGS, r_c: float = R_C_CGS) -> dict:
    """3-D and reduced 1-D couplings for the given rate and length (CGS)."""
    return {
        "lambda_s": lambda_rate,
        "r_c_cm": r_c,
        "gamma3d_cm3_s": gamma_from_lambda_3d(lambda_rate, r_c),
        "gamma1d_cm_s": gamma_from_lambda(lambda_rate, r_c),
        "lambda_natural": CGS.to_natural(lambda_rate, "rate"),
    }


def collapse_time(lambda_rate: float, n_nucleons: float) -> float:
    """Mean waiting time before the first collapse of an N-nucleon body."""
    rate = lambda_rate * n_nucleons
    return math.inf if rate == 0 else 1.0 / rate
