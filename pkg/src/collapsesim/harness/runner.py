"""Ensemble execution and result files.

Trajectories are cut into fixed chunks of ``CHUNK_SIZE`` consecutive
indices.  The partition never depends on the worker count, and trajectory
``k`` always draws from ``trajectory_rng(master_seed, k)``, so the output
is a pure function of the configuration.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from .. import __version__
from ..csl import SmearingKernel, run_csl_ensemble
from ..grw import run_grw_trajectory
from ..seeding import SEED_DERIVATION, trajectory_rng, trajectory_rngs
from ..stats import EnsembleAccumulator, EnsembleSummary, TrajectoryRecord
from ..units import CGS
from .config import ExperimentConfig

CHUNK_SIZE = 64
FORMAT_VERSION = 1


class TrajectoryError(RuntimeError):
    """A module error raised while integrating a specific trajectory."""

    def __init__(self, index, cause: Exception):
        self.index = index
        self.cause = cause
        super().__init__(f"trajectory {index}: {type(cause).__name__}: {cause}")


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    config: ExperimentConfig
    summary: EnsembleSummary
    records: list[TrajectoryRecord]


def chunk_bounds(n_trajectories: int, chunk_size: int = CHUNK_SIZE) -> list[tuple[int, int]]:
    return [(s, min(s + chunk_size, n_trajectories))
            for s in range(0, n_trajectories, chunk_size)]


def run_chunk(config: ExperimentConfig, start: int, stop: int) -> list[TrajectoryRecord]:
    grid = config.grid.build()
    psi0 = config.initial_state.build(grid)
    lobes = config.initial_state.lobes(grid)
    h = config.hamiltonian.build(grid)
    tm = config.time
    params = config.collapse
    if config.model == "csl":
        try:
            _, series, info = run_csl_ensemble(
                psi0, h, params, tm.t_final, tm.dt, trajectory_rngs(
                    config.ensemble.master_seed, stop - start, start),
                tm.sample_times, lobes, SmearingKernel(grid, params.r_c),
                stop_mass=config.ensemble.stop_mass, scheme=config.ensemble.scheme,
                index_offset=start)
        except (ValueError, ArithmeticError, RuntimeError) as exc:
            raise TrajectoryError(f"{start}..{stop - 1}", exc) from exc
        return [TrajectoryRecord.from_series(start + i, {k: v[i] for k, v in series.items()},
                                             correction=float(info["realized_correction"][i]))
                for i in range(stop - start)]
    if config.model == "schrodinger":
        params = params.replace(lambda_rate=0.0)
    out = []
    for k in range(start, stop):
        try:
            res = run_grw_trajectory(psi0, h, params, tm.t_final, tm.dt,
                                     trajectory_rng(config.ensemble.master_seed, k),
                                     tm.sample_times, lobes)
        except (ValueError, ArithmeticError, RuntimeError) as exc:
            raise TrajectoryError(k, exc) from exc
        out.append(TrajectoryRecord.from_series(k, res.observables_series, res.n_jumps))
    return out


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    if workers < 1:
        raise ValueError("workers must be >= 1")
    bounds = chunk_bounds(config.ensemble.n_trajectories)
    acc = EnsembleAccumulator(config.time.sample_times)
    if workers == 1 or len(bounds) == 1:
        chunks = (run_chunk(config, a, b) for a, b in bounds)
        for recs in chunks:
            for r in recs:
                acc.add(r)
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(bounds))) as pool:
            futures = [pool.submit(run_chunk, config, a, b) for a, b in bounds]
            # completion order is irrelevant: the accumulator keys by index
            for fut in futures:
                for r in fut.result():
                    acc.add(r)
    return ExperimentResult(config, acc.summary(), acc.ordered())


def _finite(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def units_block() -> dict:
    return {
        "system": "natural: hbar = m0 = r_C = 1",
        "cgs": CGS.header(),
    }


def render_tree(result: ExperimentResult) -> str:
    doc = {
        "format_version": FORMAT_VERSION,
        "generator": {"name": "collapsesim", "version": __version__},
        "seed_derivation": SEED_DERIVATION,
        "units": units_block(),
        "config": result.config.to_dict(),
        "summary": result.summary.to_dict(),
        "trajectories": [r.to_dict() for r in result.records],
    }
    return json.dumps(_finite(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


TABLE_COLUMNS = (
    ("time", "t_nat"),
    ("mass_left", "1"),
    ("mass_right", "1"),
    ("mass_left_stderr", "1"),
    ("mass_right_stderr", "1"),
    ("coherence_re", "1"),
    ("coherence_im", "1"),
    ("coherence_abs", "1"),
    ("coherence_stderr", "1"),
    ("var_x_median", "r_C^2"),
)


def render_table(result: ExperimentResult) -> str:
    s = result.summary
    buf = io.StringIO()
    hdr = CGS.header()
    buf.write(f"# collapsesim {__version__} format {FORMAT_VERSION} model={result.config.model} "
              f"n_trajectories={s.n_trajectories} master_seed="
              f"{result.config.ensemble.master_seed}\n")
    buf.write("# units: natural (hbar = m0 = r_C = 1); "
              + "; ".join(f"{k}={v!r}" for k, v in hdr.items()) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"{name}[{unit}]" for name, unit in TABLE_COLUMNS])
    for i, t in enumerate(s.sample_times):
        row = [t, *s.mean_lobe_mass[i], *s.lobe_mass_stderr[i], s.coherence_mean[i].real,
               s.coherence_mean[i].imag, s.coherence_series[i], s.coherence_stderr[i],
               s.var_x_median_series[i]]
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def render(result: ExperimentResult, fmt: str) -> str:
    if fmt == "table":
        return render_table(result)
    if fmt == "tree":
        return render_tree(result)
    raise ValueError(f"unknown output format {fmt!r}")


def write_output(result: ExperimentResult, path: Optional[str] = None,
                 fmt: Optional[str] = None) -> str:
    fmt = fmt or result.config.output.format
    text = render(result, fmt)
    path = path if path is not None else result.config.output.path
    if path is not None:
        Path(path).write_text(text)
    return text


def with_seed(config: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(config, ensemble=replace(config.ensemble, master_seed=seed))
