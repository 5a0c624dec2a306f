"""Ensemble aggregation, statistical tests and the reference decoherence law."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .observables import LobeTemplates, TwoLobeDensityMatrix
from .propagator import HamiltonianSpec
from .state import CollapseParams, LatticeGrid, make_delta, superpose


class TooFewSamplesError(ValueError):
    pass


class InsufficientSignalError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Observables of one trajectory at the ensemble's sample times."""
    index: int
    mass_left: np.ndarray
    mass_right: np.ndarray
    coherence: np.ndarray  # complex rho_LR
    mean_x: np.ndarray
    var_x: np.ndarray
    n_jumps: int = 0
    correction: float = 0.0

    @property
    def outcome(self) -> int:
        """Lobe holding the majority of the final probability (0 left, 1 right)."""
        return int(self.mass_right[-1] > 0.5)

    @classmethod
    def from_series(cls, index: int, series: dict, n_jumps: int = 0,
                    correction: float = 0.0) -> "TrajectoryRecord":
        return cls(index, np.asarray(series["mass_left"]), np.asarray(series["mass_right"]),
                   np.asarray(series["rho_lr_re"]) + 1j * np.asarray(series["rho_lr_im"]),
                   np.asarray(series["mean_x"]), np.asarray(series["var_x"]),
                   n_jumps, correction)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "outcome": self.outcome,
            "n_jumps": self.n_jumps,
            "correction": float(self.correction),
            "final_mass_right": float(self.mass_right[-1]),
            "final_mean_x": float(self.mean_x[-1]),
            "final_var_x": float(self.var_x[-1]),
        }


@dataclass(frozen=True, eq=False)
class EnsembleSummary:
    n_trajectories: int
    sample_times: np.ndarray
    mean_lobe_mass: np.ndarray  # (n_samples, 2): left, right
    lobe_mass_stderr: np.ndarray  # (n_samples, 2)
    outcome_frequencies: np.ndarray  # (2,)
    coherence_mean: np.ndarray  # complex ensemble mean of rho_LR
    coherence_stderr: np.ndarray
    var_x_median_series: np.ndarray
    mean_jumps: float = 0.0

    def __post_init__(self):
        if self.n_trajectories and abs(float(np.sum(self.outcome_frequencies)) - 1) > 1e-12:
            raise ValueError("outcome frequencies must sum to 1")
        coh = self.coherence_series
        finite = coh[np.isfinite(coh)]
        if finite.size and (finite.min() < 0 or finite.max() > 0.5 + 1e-9):
            raise ValueError("coherence magnitudes must lie in [0, 0.5]")

    @property
    def coherence_series(self) -> np.ndarray:
        return np.abs(self.coherence_mean)

    def density_matrix(self, i: int) -> TwoLobeDensityMatrix:
        """Ensemble-averaged two-lobe matrix at sample ``i``, trace-normalized."""
        pl, pr = self.mean_lobe_mass[i]
        total = pl + pr
        return TwoLobeDensityMatrix.from_entries(pl / total, pr / total,
                                                 self.coherence_mean[i] / total)

    def to_dict(self) -> dict:
        return {
            "n_trajectories": self.n_trajectories,
            "sample_times": self.sample_times.tolist(),
            "mean_lobe_mass": self.mean_lobe_mass.tolist(),
            "lobe_mass_stderr": self.lobe_mass_stderr.tolist(),
            "outcome_frequencies": self.outcome_frequencies.tolist(),
            "coherence_re": self.coherence_mean.real.tolist(),
            "coherence_im": self.coherence_mean.imag.tolist(),
            "coherence_series": self.coherence_series.tolist(),
            "coherence_stderr": self.coherence_stderr.tolist(),
            "var_x_median_series": self.var_x_median_series.tolist(),
            "mean_jumps": self.mean_jumps,
        }


class EnsembleAccumulator:
    """Merge-order independent collection of trajectory records.

    Records are keyed by trajectory index; ``merge`` is a disjoint union and
    ``summary`` reduces in index order, so any partition of the work over
    workers gives bit-identical results.
    """

    def __init__(self, sample_times: Sequence[float], records: Iterable[TrajectoryRecord] = ()):
        self.sample_times = np.asarray(sample_times, dtype=float)
        self.records: dict[int, TrajectoryRecord] = {}
        for r in records:
            self.add(r)

    def add(self, record: TrajectoryRecord):
        if record.index in self.records:
            raise ValueError(f"duplicate trajectory index {record.index}")
        self.records[record.index] = record

    def merge(self, other: "EnsembleAccumulator") -> "EnsembleAccumulator":
        if not np.array_equal(self.sample_times, other.sample_times):
            raise ValueError("cannot merge ensembles with different sample times")
        out = EnsembleAccumulator(self.sample_times, self.records.values())
        for r in other.records.values():
            out.add(r)
        return out

    def ordered(self) -> list[TrajectoryRecord]:
        return [self.records[k] for k in sorted(self.records)]

    def summary(self) -> EnsembleSummary:
        recs = self.ordered()
        n = len(recs)
        n_s = self.sample_times.size
        if n == 0:
            nan = np.full(n_s, np.nan)
            return EnsembleSummary(0, self.sample_times, np.full((n_s, 2), np.nan),
                                   np.full((n_s, 2), np.nan), np.zeros(2),
                                   nan + 0j, nan, nan)
        masses = np.stack([np.stack([r.mass_left, r.mass_right], axis=-1) for r in recs])
        coh = np.stack([r.coherence for r in recs])
        var_x = np.stack([r.var_x for r in recs])
        ddof = 1 if n > 1 else 0
        outcomes = np.array([r.outcome for r in recs])
        right = outcomes.mean()
        return EnsembleSummary(
            n_trajectories=n,
            sample_times=self.sample_times.copy(),
            mean_lobe_mass=masses.mean(axis=0),
            lobe_mass_stderr=masses.std(axis=0, ddof=ddof) / math.sqrt(n),
            outcome_frequencies=np.array([1.0 - right, right]),
            coherence_mean=coh.mean(axis=0),
            coherence_stderr=np.sqrt(coh.real.var(axis=0, ddof=ddof)
                                     + coh.imag.var(axis=0, ddof=ddof)) / math.sqrt(n),
            var_x_median_series=np.median(var_x, axis=0),
            mean_jumps=float(np.mean([r.n_jumps for r in recs])),
        )


def lindblad_oracle_evolve(rho0: TwoLobeDensityMatrix, decay_rate: float,
                           t: float) -> TwoLobeDensityMatrix:
    """Two-lobe closure of the averaged dynamics at H = 0.

    Populations are conserved and the coherence decays as ``exp(-rate t)``.
    """
    if decay_rate < 0:
        raise ValueError("decay rate must be non-negative")
    if t < 0:
        raise ValueError("t must be non-negative")
    m = rho0.matrix.copy()
    f = math.exp(-decay_rate * t)
    m[0, 1] *= f
    m[1, 0] *= f
    return TwoLobeDensityMatrix(m)


@dataclass(frozen=True)
class BornRuleReport:
    n: int
    counts: tuple[int, int]
    frequencies: tuple[float, float]
    expected: tuple[float, float]
    chi_square: float
    z_score: float
    passed: bool

    @property
    def binomial_sigma(self) -> float:
        p = self.expected[1]
        return math.sqrt(p * (1 - p) / self.n)


def born_rule_test(outcomes: Sequence[int], expected_weights: tuple[float, float],
                   n_sigma: float = 3.0) -> BornRuleReport:
    """One-degree-of-freedom chi-square of lobe labels against Born weights.

    Passes when the statistic is at most ``n_sigma**2``, i.e. the right-lobe
    count lies within ``n_sigma`` binomial standard deviations.
    """
    labels = np.asarray(outcomes, dtype=int)
    n = labels.size
    if n < 100:
        raise TooFewSamplesError(f"need at least 100 outcomes, got {n}")
    if np.any((labels != 0) & (labels != 1)):
        raise ValueError("outcome labels must be 0 (left) or 1 (right)")
    wl, wr = expected_weights
    total = wl + wr
    wl, wr = wl / total, wr / total
    n_right = int(labels.sum())
    n_left = n - n_right
    chi2 = (n_left - n * wl) ** 2 / (n * wl) + (n_right - n * wr) ** 2 / (n * wr)
    z = (n_right - n * wr) / math.sqrt(n * wl * wr)
    return BornRuleReport(n, (n_left, n_right), (n_left / n, n_right / n), (wl, wr),
                          float(chi2), float(z), bool(chi2 <= n_sigma**2))


@dataclass(frozen=True)
class DecayFit:
    rate: float
    r_squared: float
    n_points: int


def coherence_decay_fit(summary_or_times, coherence=None, stderr=None) -> DecayFit:
    """Least-squares line through ``log |coherence|`` versus time.

    Accepts an :class:`EnsembleSummary` or explicit arrays.  Only points
    whose magnitude exceeds ten standard errors enter the fit.
    """
    if isinstance(summary_or_times, EnsembleSummary):
        times = summary_or_times.sample_times
        coherence = summary_or_times.coherence_series
        stderr = summary_or_times.coherence_stderr
    else:
        times = summary_or_times
    times = np.asarray(times, dtype=float)
    coherence = np.abs(np.asarray(coherence))
    stderr = np.zeros_like(coherence) if stderr is None else np.asarray(stderr, dtype=float)
    use = (coherence > 10 * stderr) & (coherence > 0)
    if use.sum() < 5:
        raise InsufficientSignalError(
            f"only {int(use.sum())} sample times have coherence above 10 standard errors")
    t, y = times[use], np.log(coherence[use])
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot <= 1e-300 or ss_res <= 1e-28 * max(ss_tot, 1.0) else 1 - ss_res / ss_tot
    return DecayFit(float(-slope), r2, int(use.sum()))


@dataclass(frozen=True)
class DecayCalibration:
    fitted_rate: float
    closed_form: float
    lattice_closed_form: float
    separation: float
    n_trajectories: int

    @property
    def relative_error(self) -> float:
        return abs(self.fitted_rate - self.closed_form) / self.closed_form

    def rate_for(self, params: CollapseParams, separation: float) -> float:
        """Calibrated rate at another separation: closed form times fitted/closed ratio."""
        from .csl import coherence_decay_rate
        return coherence_decay_rate(params, separation) * self.fitted_rate / self.closed_form


def calibrate_decay_rate(params: CollapseParams, n_trajectories: int = 10_000,
                         seed: int = 2024, dt: Optional[float] = None,
                         n_samples: int = 16) -> DecayCalibration:
    """Brute-force coherence decay on an 8-site ring.

    Two single-site lobes four sites apart (``dx = r_c``) evolve under the
    CSL step with ``H = 0``; the averaged off-diagonal element is fitted to an
    exponential over one-and-a-half decay times.
    """
    from .csl import SmearingKernel, coherence_decay_rate, lattice_decay_rate, run_csl_ensemble
    from .seeding import trajectory_rngs

    grid = LatticeGrid(8, params.r_c, 0.0)
    left, right = make_delta(grid, 2), make_delta(grid, 6)
    psi0 = superpose(1 / math.sqrt(2), left, 1 / math.sqrt(2), right)
    separation = 4 * grid.dx
    closed = coherence_decay_rate(params, separation)
    if closed == 0:
        raise ValueError("collapse-free parameters have no decay to calibrate")
    kernel = SmearingKernel(grid, params.r_c)
    t_max = 1.5 / closed
    dt = dt if dt is not None else 5e-4 / closed
    times = np.linspace(0, t_max, n_samples)
    lobes = LobeTemplates(left, right)
    _, series, _ = run_csl_ensemble(psi0, HamiltonianSpec.zero(grid), params, t_max, dt,
                                    trajectory_rngs(seed, n_trajectories), times, lobes,
                                    kernel, block=64)
    fit = coherence_decay_fit(times, series["rho_lr_re"].mean(axis=0))
    return DecayCalibration(fit.rate, closed, lattice_decay_rate(params, kernel, 4),
                            separation, n_trajectories)
