"""Self-verification suite.

Each check runs a small experiment, compares one measured number with a
tolerance and returns a :class:`CheckResult`.  Two scales exist: ``quick``
(the CLI default, about two minutes on one core) and ``full`` (the sizes
used by the acceptance tests).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Optional

import numpy as np

from ..csl import SmearingKernel, run_csl_ensemble
from ..csl import coherence_decay_rate as csl_decay_rate
from ..grw import collapse_once, jump_kernel, jump_probability_density, run_grw_trajectory
from ..observables import LobeTemplates, trace_distance
from ..propagator import HamiltonianSpec, SplitStepPropagator
from ..seeding import trajectory_rng, trajectory_rngs
from ..state import (CollapseParams, LatticeGrid, WaveFunction, gamma_from_lambda_3d,
                     make_cat, make_gaussian_packet, normalize)
from ..stats import (EnsembleAccumulator, TrajectoryRecord, born_rule_test,
                     calibrate_decay_rate, lindblad_oracle_evolve)
from ..units import LAMBDA_CGS, R_C_CGS

FAULTS = ("lambda-scale",)
WEIGHTS = (0.36, 0.64)


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return (f"{verdict} {self.name}: measured={self.measured:.6g} "
                f"tolerance={self.tolerance:.6g}{extra} [{self.seconds:.1f}s]")

    def to_dict(self) -> dict:
        return {"name": self.name, "measured": self.measured, "tolerance": self.tolerance,
                "passed": self.passed, "detail": self.detail}


@dataclass
class VerifyReport:
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        out = [r.line() for r in self.results]
        n_pass = sum(r.passed for r in self.results)
        out.append(f"{n_pass}/{len(self.results)} checks passed")
        return out


@dataclass(frozen=True)
class Scale:
    name: str
    born_grw_trajectories: int
    born_csl_trajectories: int
    born_csl_sites: int
    amplification_trajectories: int
    norm_trajectories: int
    lindblad_trajectories: int
    calibration_trajectories: int
    grw_agreement_trajectories: int
    localization_trajectories: int


SCALES = {
    "quick": Scale("quick", 2000, 400, 64, 400, 8, 2500, 2000, 2500, 12),
    "full": Scale("full", 10_000, 5000, 128, 1000, 16, 10_000, 10_000, 10_000, 40),
}


def _timed(name: str, fn: Callable[[], tuple[float, float, bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    measured, tol, ok, detail = fn()
    return CheckResult(name, float(measured), float(tol), bool(ok), detail,
                       time.perf_counter() - t0)


def _cat_grid(n_sites: int) -> LatticeGrid:
    # 64 sites at dx=0.3 or 128 at dx=0.2 both hold a +-5 cat with sigma=1
    return LatticeGrid.centered(n_sites, 0.3 if n_sites <= 64 else 25.6 / n_sites)


def _cat(grid: LatticeGrid, weights=WEIGHTS):
    psi = make_cat(grid, 10.0, 1.0, weights)
    lobes = LobeTemplates(make_gaussian_packet(grid, -5.0, 1.0),
                          make_gaussian_packet(grid, 5.0, 1.0))
    return psi, lobes


def random_states(grid: LatticeGrid, n: int, seed: int = 11) -> list[WaveFunction]:
    """Rough random vectors and random packets, alternating."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        if i % 2 == 0:
            amps = rng.normal(size=grid.n_sites) + 1j * rng.normal(size=grid.n_sites)
            out.append(normalize(WaveFunction(grid, amps)))
        else:
            sigma = rng.uniform(2 * grid.dx, grid.length / 16)
            lo, hi = grid.x_min + 4 * sigma, grid.x_max - 4 * sigma
            out.append(make_gaussian_packet(grid, rng.uniform(lo, hi), sigma,
                                            rng.uniform(-3, 3)))
    return out


# --- checks -----------------------------------------------------------------


def check_completeness(scale: Scale, fault=None) -> CheckResult:
    def run():
        grid = LatticeGrid.centered(256, 0.25)
        kernel = jump_kernel(grid, 1.0)
        worst = max(abs(jump_probability_density(psi, 1.0, kernel).sum() * grid.dx - 1)
                    for psi in random_states(grid, 50))
        return worst, 1e-8, worst <= 1e-8, "max |sum p dx - 1| over 50 states"
    return _timed("completeness", run)


def check_born_grw(scale: Scale, fault=None) -> CheckResult:
    def run():
        grid = _cat_grid(128)
        psi, lobes = _cat(grid)
        kernel = jump_kernel(grid, 1.0)
        outcomes = []
        for k in range(scale.born_grw_trajectories):
            after, _ = collapse_once(psi, 1.0, trajectory_rng(101, k), lobes=lobes,
                                     kernel=kernel)
            outcomes.append(int(after.lobe_masses(lobes.boundary)[1] > 0.5))
        rep = born_rule_test(outcomes, WEIGHTS)
        dev = abs(rep.frequencies[1] - WEIGHTS[1])
        tol = 3 * rep.binomial_sigma
        return dev, tol, dev <= tol, f"right-lobe frequency {rep.frequencies[1]:.4f}, n={rep.n}"
    return _timed("born_grw", run)


def check_born_csl(scale: Scale, fault=None) -> CheckResult:
    def run():
        grid = _cat_grid(scale.born_csl_sites)
        psi, lobes = _cat(grid)
        params = CollapseParams(1.0)
        h = HamiltonianSpec.zero(grid)
        kernel = SmearingKernel(grid, 1.0)
        n = scale.born_csl_trajectories
        right, unabsorbed = [], 0
        for start in range(0, n, 500):
            stop = min(start + 500, n)
            _, series, info = run_csl_ensemble(
                psi, h, params, 15.0, 5e-4, trajectory_rngs(202, stop - start, start),
                [15.0], lobes, kernel, block=64, stop_mass=0.99, index_offset=start)
            right.extend((series["mass_right"][:, -1] > 0.5).astype(int).tolist())
            unabsorbed += int(np.isnan(info["absorbed_at"]).sum())
        rep = born_rule_test(right, WEIGHTS)
        dev = abs(rep.frequencies[1] - WEIGHTS[1])
        tol = 3 * rep.binomial_sigma
        return (dev, tol, dev <= tol,
                f"right-lobe frequency {rep.frequencies[1]:.4f}, n={rep.n}, "
                f"{unabsorbed} not absorbed by t=15")
    return _timed("born_csl", run)


def amplification_slope(n_values: Iterable[int], lambda_rate: float, t_final: float,
                        n_traj: int, simulated_lambda: Optional[float] = None,
                        seed: int = 303) -> tuple[float, list[float]]:
    """Regression slope of mean GRW jump count against nucleon number."""
    grid = LatticeGrid.centered(64, 0.5)
    psi = make_gaussian_packet(grid, 0.0, 2.0)
    h = HamiltonianSpec.zero(grid)
    lam = lambda_rate if simulated_lambda is None else simulated_lambda
    means = []
    for n_nuc in n_values:
        params = CollapseParams(lam, n_nucleons=n_nuc)
        counts = [run_grw_trajectory(psi, h, params, t_final, t_final,
                                     trajectory_rng(seed + n_nuc, k)).n_jumps
                  for k in range(n_traj)]
        means.append(float(np.mean(counts)))
    slope = float(np.polyfit(np.asarray(list(n_values), float), means, 1)[0])
    return slope, means


def check_amplification(scale: Scale, fault=None) -> CheckResult:
    def run():
        lam, t_final = 1.0, 5.0
        simulated = 2 * lam if fault == "lambda-scale" else None
        ns = (1, 2, 4, 8)
        slope, means = amplification_slope(ns, lam, t_final, scale.amplification_trajectories,
                                           simulated)
        expected = lam * t_final
        rel = abs(slope - expected) / expected
        detail = f"slope {slope:.4f} vs lambda*t_final {expected}; means " + \
            ", ".join(f"N={n}:{m:.3f}" for n, m in zip(ns, means))
        if fault:
            detail += f"; fault={fault}"
        return rel, 0.05, rel <= 0.05, detail
    return _timed("amplification", run)


def check_norm_drift(scale: Scale, fault=None) -> CheckResult:
    def run():
        grid = LatticeGrid.centered(256, 0.1)
        h = HamiltonianSpec.harmonic(grid, 0.5)
        psi = make_gaussian_packet(grid, 1.0, 1.0, 1.0)
        prop = SplitStepPropagator(grid, h, 1e-3)
        amps = psi.amplitudes
        for _ in range(10_000):
            amps = prop(amps)
        drift = abs(float(np.sum(np.abs(amps) ** 2) * grid.dx) - 1)
        return drift, 1e-8, drift < 1e-8, "unitary, 1e4 steps, harmonic well"
    return _timed("norm_drift", run)


def norm_corrections(dt: float, n_steps: int, n_traj: int, seed: int = 404) -> dict:
    """Cumulative CSL renormalization over ``n_steps`` steps of size ``dt``."""
    grid = _cat_grid(64)
    psi, _ = _cat(grid)
    _, _, info = run_csl_ensemble(psi, HamiltonianSpec.free(grid), CollapseParams(1.0),
                                  n_steps * dt, dt, trajectory_rngs(seed, n_traj),
                                  [n_steps * dt])
    return {"abs": float(info["abs_correction"].mean()),
            "weak": float(info["weak_correction"].mean()),
            "max_step": float(info["max_step_correction"].max())}


def check_csl_norm(scale: Scale, fault=None) -> CheckResult:
    def run():
        coarse = norm_corrections(1e-4, 10_000, scale.norm_trajectories)
        fine = norm_corrections(5e-5, 10_000, scale.norm_trajectories)
        ratio = coarse["abs"] / fine["abs"]
        ok = coarse["abs"] < 1e-2 and ratio >= 2
        return (coarse["abs"], 1e-2, ok,
                f"sum |norm^2 - 1| over 1e4 steps: dt=1e-4 {coarse['abs']:.3g}, "
                f"dt=5e-5 {fine['abs']:.3g}, ratio {ratio:.3f} (needs >= 2)")
    return _timed("csl_norm", run)


@lru_cache(maxsize=2)
def lindblad_ensemble(n_traj: int, n_calibration: int):
    """The shared H=0 CSL cat ensemble and the calibrated decay rate."""
    grid = _cat_grid(64)
    psi, lobes = _cat(grid)
    params = CollapseParams(1.0)
    kernel = SmearingKernel(grid, 1.0)
    times = np.linspace(0.0, 2.0, 11)
    acc = EnsembleAccumulator(times)
    for start in range(0, n_traj, 500):
        stop = min(start + 500, n_traj)
        _, series, _ = run_csl_ensemble(psi, HamiltonianSpec.zero(grid), params, 2.0, 5e-4,
                                        trajectory_rngs(505, stop - start, start), times,
                                        lobes, kernel, block=64, index_offset=start)
        for i in range(stop - start):
            acc.add(TrajectoryRecord.from_series(start + i,
                                                 {k: v[i] for k, v in series.items()}))
    calib = calibrate_decay_rate(params, n_calibration)
    return acc.summary(), calib, params


def check_lindblad(scale: Scale, fault=None) -> CheckResult:
    def run():
        summary, calib, params = lindblad_ensemble(scale.lindblad_trajectories,
                                                   scale.calibration_trajectories)
        rate = calib.rate_for(params, 10.0)
        rho0 = summary.density_matrix(0)
        dists = [trace_distance(summary.density_matrix(i),
                                lindblad_oracle_evolve(rho0, rate, t))
                 for i, t in enumerate(summary.sample_times)]
        worst = max(dists)
        return (worst, 0.02, worst <= 0.02,
                f"calibrated Gamma {rate:.4f} (brute force {calib.fitted_rate:.4f} vs closed "
                f"form {calib.closed_form:.4f}), n={summary.n_trajectories}")
    return _timed("lindblad", run)


def check_calibration(scale: Scale, fault=None) -> CheckResult:
    def run():
        _, calib, _ = lindblad_ensemble(scale.lindblad_trajectories,
                                        scale.calibration_trajectories)
        return (calib.relative_error, 0.05, calib.relative_error <= 0.05,
                f"fitted {calib.fitted_rate:.4f}, closed form {calib.closed_form:.4f}, "
                f"lattice closed form {calib.lattice_closed_form:.4f}")
    return _timed("calibration", run)


def check_martingale(scale: Scale, fault=None) -> CheckResult:
    def run():
        summary, _, _ = lindblad_ensemble(scale.lindblad_trajectories,
                                          scale.calibration_trajectories)
        m0 = summary.mean_lobe_mass[0]
        se = summary.lobe_mass_stderr[1:]
        dev = np.abs(summary.mean_lobe_mass[1:] - m0)
        z = float(np.max(dev / np.maximum(se, 1e-300)))
        return z, 3.0, z <= 3.0, "max |mean mass(t) - mass(0)| / stderr over times and lobes"
    return _timed("martingale", run)


def check_grw_csl_agreement(scale: Scale, fault=None) -> CheckResult:
    def run():
        summary, _, params = lindblad_ensemble(scale.lindblad_trajectories,
                                               scale.calibration_trajectories)
        grid = _cat_grid(64)
        psi, lobes = _cat(grid)
        # equal decay laws: lambda_eff (1 - e^{-d^2/4}) = Gamma_CSL(d)
        d = 10.0
        lam_eff = csl_decay_rate(params, d) / (1 - math.exp(-d**2 / 4))
        grw = CollapseParams(lam_eff)
        h = HamiltonianSpec.zero(grid)
        acc = EnsembleAccumulator(summary.sample_times)
        for k in range(scale.grw_agreement_trajectories):
            res = run_grw_trajectory(psi, h, grw, 2.0, 2.0, trajectory_rng(606, k),
                                     summary.sample_times, lobes)
            acc.add(TrajectoryRecord.from_series(k, res.observables_series, res.n_jumps))
        other = acc.summary()
        se = np.hypot(summary.coherence_stderr, other.coherence_stderr)
        diff = np.abs(summary.coherence_series - other.coherence_series)
        z = float(np.max(diff[1:] / se[1:]))
        return z, 2.0, z <= 2.0, "max coherence gap / combined stderr over sample times"
    return _timed("grw_csl_agreement", run)


def check_unitary_baseline(scale: Scale, fault=None) -> CheckResult:
    def run():
        grid = LatticeGrid.centered(512, 0.1)
        psi = make_gaussian_packet(grid, 0.0, 1.0)
        h = HamiltonianSpec.free(grid)
        prop = SplitStepPropagator(grid, h, 1e-3)
        amps = psi.amplitudes
        for _ in range(2000):
            amps = prop(amps)
        var = psi.with_amplitudes(amps).var_x()
        expected = 1.0 + (2.0 / 2.0) ** 2
        rel = abs(var - expected) / expected

        small = LatticeGrid.centered(64, 0.3)
        psi_s, lobes = _cat(small)
        free = HamiltonianSpec.free(small)
        amps_csl, _, _ = run_csl_ensemble(psi_s, free, CollapseParams(0.0), 1.0, 1e-3,
                                          trajectory_rngs(707, 1), [1.0], lobes)
        prop_s = SplitStepPropagator(small, free, 1e-3)
        ref = psi_s.amplitudes
        for _ in range(1000):
            ref = prop_s(ref)
        gap = float(np.max(np.abs(amps_csl[0] - ref)))
        ok = rel <= 1e-3 and gap <= 1e-8
        return rel, 1e-3, ok, (f"Var(x) at t=2 {var:.8f} vs {expected}; "
                               f"gamma=0 CSL vs unitary max gap {gap:.2e} (tol 1e-8)")
    return _timed("unitary_baseline", run)


def check_localization(scale: Scale, fault=None) -> CheckResult:
    def run():
        grid = LatticeGrid.centered(256, 0.4)
        psi = make_gaussian_packet(grid, 0.0, 10.0)
        times = np.linspace(0.0, 3.0, 7)
        _, series, _ = run_csl_ensemble(psi, HamiltonianSpec.zero(grid), CollapseParams(1.0),
                                        3.0, 1e-3, trajectory_rngs(808,
                                                                   scale.localization_trajectories),
                                        times)
        med = np.median(series["var_x"], axis=0)
        steps = np.diff(med)
        worst = float(steps.max())
        return worst, 0.0, worst < 0, "largest change of the median Var(x) between samples; " \
            + "medians " + ", ".join(f"{v:.2f}" for v in med)
    return _timed("localization", run)


def _experiment_yaml(model: str) -> str:
    return f"""
model: {model}
grid: {{n_sites: 64, dx: 0.3}}
initial_state: {{kind: cat, sigma: 1.0, separation: 10.0, weights: [0.36, 0.64]}}
hamiltonian: {{kind: free, mass: 1.0}}
collapse: {{lambda_rate: 1.0}}
time: {{t_final: 0.5, dt: 0.0005, n_samples: 6}}
ensemble: {{n_trajectories: 150, master_seed: 9}}
"""


def check_determinism(scale: Scale, fault=None) -> CheckResult:
    def run():
        from .config import load_config
        from .runner import render, run_experiment
        mismatches = []
        for model in ("grw", "csl"):
            cfg = load_config(_experiment_yaml(model))
            outputs = []
            for workers in (1, 8, 1):
                res = run_experiment(cfg, workers=workers)
                outputs.append(render(res, "tree") + render(res, "table"))
            if not (outputs[0] == outputs[1] == outputs[2]):
                mismatches.append(model)
        return (len(mismatches), 0, not mismatches,
                "byte comparison of 1 vs 8 workers and a repeated run"
                + (f"; differing: {mismatches}" if mismatches else ""))
    return _timed("determinism", run)


def check_units(scale: Scale, fault=None) -> CheckResult:
    def run():
        got = gamma_from_lambda_3d(LAMBDA_CGS, R_C_CGS)
        expected = LAMBDA_CGS * (4 * math.pi * R_C_CGS**2) ** 1.5
        rel = abs(got - expected) / expected
        tol = 4 * np.finfo(float).eps
        return rel, tol, rel <= tol, f"gamma_3d = {got:.6e} cm^3/s"
    return _timed("units", run)


CHECKS: dict[str, Callable[[Scale, Optional[str]], CheckResult]] = {
    "completeness": check_completeness,
    "born_grw": check_born_grw,
    "born_csl": check_born_csl,
    "amplification": check_amplification,
    "norm_drift": check_norm_drift,
    "csl_norm": check_csl_norm,
    "calibration": check_calibration,
    "lindblad": check_lindblad,
    "martingale": check_martingale,
    "grw_csl_agreement": check_grw_csl_agreement,
    "unitary_baseline": check_unitary_baseline,
    "localization": check_localization,
    "determinism": check_determinism,
    "units": check_units,
}


def verify_suite(subset: Optional[Iterable[str]] = None, scale: str = "quick",
                 fault: Optional[str] = None, on_result=None) -> VerifyReport:
    """Run the named checks (all when ``subset`` is None) and collect the verdicts.

    ``fault="lambda-scale"`` doubles the collapse rate the amplification
    check simulates while keeping its expectation, so that check must fail.
    """
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; known: {FAULTS}")
    names = list(CHECKS) if subset is None else list(subset)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks {unknown}; known: {list(CHECKS)}")
    report = VerifyReport()
    for name in names:
        result = CHECKS[name](SCALES[scale], fault)
        report.results.append(result)
        if on_result is not None:
            on_result(result)
    return report
