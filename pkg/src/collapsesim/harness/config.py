"""Experiment configuration: schema, loading, validation, serialization.

Documents are YAML (JSON is accepted as a subset).  Every violated
constraint is reported, each naming its field.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import yaml

from ..propagator import HamiltonianSpec, dt_max
from ..state import (CollapseParams, LatticeGrid, WaveFunction, make_cat, make_gaussian_packet,
                     validate_collapse_params)
from ..observables import LobeTemplates

MODELS = ("schrodinger", "grw", "csl")
STATE_KINDS = ("gaussian", "cat")
HAMILTONIAN_KINDS = ("free", "zero", "harmonic")
FORMATS = ("table", "tree")

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "collapsesim experiment",
    "type": "object",
    "required": ["model", "grid", "initial_state", "time"],
    "additionalProperties": False,
    "properties": {
        "model": {"enum": list(MODELS)},
        "grid": {
            "type": "object",
            "required": ["n_sites", "dx"],
            "additionalProperties": False,
            "properties": {
                "n_sites": {"type": "integer", "minimum": 8},
                "dx": {"type": "number", "exclusiveMinimum": 0},
                "x_min": {"type": ["number", "null"],
                          "description": "default: centered cell [-n dx/2, n dx/2)"},
            },
        },
        "initial_state": {
            "type": "object",
            "required": ["kind", "sigma"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(STATE_KINDS)},
                "sigma": {"type": "number", "description": "std of |psi|^2 per lobe"},
                "x0": {"type": "number", "description": "gaussian center"},
                "k0": {"type": "number", "description": "gaussian wavenumber"},
                "separation": {"type": "number", "description": "cat lobe distance"},
                "weights": {"type": "array", "items": {"type": "number"},
                            "minItems": 2, "maxItems": 2,
                            "description": "cat lobe probabilities (left, right)"},
            },
        },
        "hamiltonian": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(HAMILTONIAN_KINDS)},
                "mass": {"type": "number", "exclusiveMinimum": 0},
                "omega": {"type": "number"},
                "hbar": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "collapse": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda_rate": {"type": "number", "minimum": 0},
                "r_c": {"type": "number", "exclusiveMinimum": 0},
                "m0": {"type": "number", "exclusiveMinimum": 0},
                "n_nucleons": {"type": "integer", "minimum": 1},
                "hbar": {"type": "number", "exclusiveMinimum": 0},
                "mass": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "gamma": {"type": ["number", "null"],
                          "description": "optional; must equal lambda_rate*sqrt(4 pi r_c^2)"},
            },
        },
        "time": {
            "type": "object",
            "required": ["t_final", "dt"],
            "additionalProperties": False,
            "properties": {
                "t_final": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "sample_times": {"type": "array", "items": {"type": "number"}},
                "n_samples": {"type": "integer", "minimum": 2},
            },
        },
        "ensemble": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_trajectories": {"type": "integer", "minimum": 1},
                "master_seed": {"type": "integer", "minimum": 0},
                "stop_mass": {"type": ["number", "null"]},
                "scheme": {"enum": ["compensated", "euler"]},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": ["string", "null"]},
                "format": {"enum": list(FORMATS)},
            },
        },
    },
}


class ConfigError(ValueError):
    """Parse or validation failure; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str], kind: str = "validation-error"):
        self.errors = list(errors)
        self.kind = kind
        super().__init__(f"{kind}: " + "; ".join(self.errors))


@dataclass(frozen=True)
class GridSpec:
    n_sites: int
    dx: float
    x_min: Optional[float] = None

    def build(self) -> LatticeGrid:
        if self.x_min is None:
            return LatticeGrid.centered(self.n_sites, self.dx)
        return LatticeGrid(self.n_sites, self.dx, self.x_min)


@dataclass(frozen=True)
class InitialStateSpec:
    kind: str
    sigma: float
    x0: float = 0.0
    k0: float = 0.0
    separation: float = 10.0
    weights: tuple[float, float] = (0.5, 0.5)

    def build(self, grid: LatticeGrid) -> WaveFunction:
        if self.kind == "gaussian":
            return make_gaussian_packet(grid, self.x0, self.sigma, self.k0)
        return make_cat(grid, self.separation, self.sigma, self.weights)

    def lobes(self, grid: LatticeGrid) -> Optional[LobeTemplates]:
        if self.kind != "cat":
            return None
        half = self.separation / 2
        return LobeTemplates(make_gaussian_packet(grid, -half, self.sigma),
                             make_gaussian_packet(grid, half, self.sigma))


@dataclass(frozen=True)
class HamiltonianConfig:
    kind: str = "free"
    mass: float = 1.0
    omega: float = 1.0
    hbar: float = 1.0

    def build(self, grid: LatticeGrid) -> HamiltonianSpec:
        if self.kind == "zero":
            return HamiltonianSpec.zero(grid)
        if self.kind == "harmonic":
            return HamiltonianSpec.harmonic(grid, self.omega, self.mass, hbar=self.hbar)
        return HamiltonianSpec.free(grid, self.mass, self.hbar)


@dataclass(frozen=True)
class TimeSpec:
    t_final: float
    dt: float
    sample_times: tuple[float, ...]


@dataclass(frozen=True)
class EnsembleSpec:
    n_trajectories: int = 1
    master_seed: int = 0
    stop_mass: Optional[float] = None
    scheme: str = "compensated"


@dataclass(frozen=True)
class OutputSpec:
    path: Optional[str] = None
    format: str = "tree"


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    grid: GridSpec
    initial_state: InitialStateSpec
    hamiltonian: HamiltonianConfig
    collapse: CollapseParams
    time: TimeSpec
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def to_dict(self) -> dict:
        c = self.collapse
        return {
            "model": self.model,
            "grid": asdict(self.grid),
            "initial_state": {**asdict(self.initial_state),
                              "weights": list(self.initial_state.weights)},
            "hamiltonian": asdict(self.hamiltonian),
            "collapse": {"lambda_rate": c.lambda_rate, "r_c": c.r_c, "m0": c.m0,
                         "n_nucleons": c.n_nucleons, "hbar": c.hbar, "mass": c.mass},
            "time": {"t_final": self.time.t_final, "dt": self.time.dt,
                     "sample_times": list(self.time.sample_times)},
            "ensemble": asdict(self.ensemble),
            "output": asdict(self.output),
        }

    def with_overrides(self, seed=None, output=None, fmt=None) -> "ExperimentConfig":
        from dataclasses import replace
        cfg = self
        if seed is not None:
            cfg = replace(cfg, ensemble=replace(cfg.ensemble, master_seed=int(seed)))
        if output is not None or fmt is not None:
            cfg = replace(cfg, output=OutputSpec(
                output if output is not None else cfg.output.path,
                fmt if fmt is not None else cfg.output.format))
        return cfg


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)


def load_config(text: str) -> ExperimentConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError([f"{problem}{where}"], kind="parse-error") from None
    if not isinstance(doc, dict):
        raise ConfigError(["document root must be a mapping"], kind="parse-error")
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> ExperimentConfig:
    errors: list[str] = []

    def section(name, required=False):
        value = doc.get(name)
        if value is None:
            if required:
                errors.append(f"{name}: required section missing")
            return {}
        if not isinstance(value, dict):
            errors.append(f"{name}: must be a mapping")
            return {}
        allowed = set(SCHEMA["properties"][name]["properties"])
        for key in value:
            if key not in allowed:
                errors.append(f"{name}.{key}: unknown field")
        return value

    for key in doc:
        if key not in SCHEMA["properties"]:
            errors.append(f"{key}: unknown section")

    def number(sec, path, value, positive=False, nonneg=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)) \
                or not math.isfinite(value):
            errors.append(f"{sec}.{path}: must be a finite number, got {value!r}")
            return None
        if positive and value <= 0:
            errors.append(f"{sec}.{path}: must be strictly positive, got {value!r}")
            return None
        if nonneg and value < 0:
            errors.append(f"{sec}.{path}: must be non-negative, got {value!r}")
            return None
        return float(value)

    def integer(sec, path, value, minimum):
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{sec}.{path}: must be an integer, got {value!r}")
            return None
        if value < minimum:
            errors.append(f"{sec}.{path}: must be >= {minimum}, got {value!r}")
            return None
        return value

    model = doc.get("model")
    if model not in MODELS:
        errors.append(f"model: must be one of {list(MODELS)}, got {model!r}")

    g = section("grid", required=True)
    n_sites = integer("grid", "n_sites", g.get("n_sites"), 8) if "n_sites" in g else None
    if g and "n_sites" not in g:
        errors.append("grid.n_sites: required")
    dx = number("grid", "dx", g.get("dx"), positive=True) if "dx" in g else None
    if g and "dx" not in g:
        errors.append("grid.dx: required")
    x_min = g.get("x_min")
    if x_min is not None:
        x_min = number("grid", "x_min", x_min)
    grid_spec = grid = None
    if n_sites is not None and dx is not None:
        grid_spec = GridSpec(n_sites, dx, x_min)
        try:
            grid = grid_spec.build()
        except ValueError as exc:
            errors.append(f"grid: {exc}")

    s = section("initial_state", required=True)
    state_spec = None
    kind = s.get("kind")
    if s and kind not in STATE_KINDS:
        errors.append(f"initial_state.kind: must be one of {list(STATE_KINDS)}, got {kind!r}")
    if s:
        sigma = number("initial_state", "sigma", s.get("sigma"), positive=True)
        x0 = number("initial_state", "x0", s.get("x0", 0.0))
        k0 = number("initial_state", "k0", s.get("k0", 0.0))
        sep = number("initial_state", "separation", s.get("separation", 10.0), positive=True)
        weights = s.get("weights", [0.5, 0.5])
        ok_w = (isinstance(weights, (list, tuple)) and len(weights) == 2
                and all(isinstance(w, (int, float)) and not isinstance(w, bool) and w >= 0
                        for w in weights) and sum(weights) > 0)
        if not ok_w:
            errors.append(f"initial_state.weights: must be two non-negative numbers "
                          f"with positive sum, got {weights!r}")
        if None not in (sigma, x0, k0, sep) and ok_w and kind in STATE_KINDS:
            total = float(sum(weights))
            state_spec = InitialStateSpec(kind, sigma, x0, k0, sep,
                                          (weights[0] / total, weights[1] / total))
            if grid is not None:
                try:
                    state_spec.build(grid)
                    state_spec.lobes(grid)
                except ValueError as exc:
                    errors.append(f"initial_state: {exc}")

    hd = section("hamiltonian")
    h_kind = hd.get("kind", "free")
    if h_kind not in HAMILTONIAN_KINDS:
        errors.append(f"hamiltonian.kind: must be one of {list(HAMILTONIAN_KINDS)}, "
                      f"got {h_kind!r}")
    h_mass = number("hamiltonian", "mass", hd.get("mass", 1.0), positive=True)
    omega = number("hamiltonian", "omega", hd.get("omega", 1.0))
    h_hbar = number("hamiltonian", "hbar", hd.get("hbar", 1.0), positive=True)
    h_spec = None
    if None not in (h_mass, omega, h_hbar) and h_kind in HAMILTONIAN_KINDS:
        h_spec = HamiltonianConfig(h_kind, h_mass, omega, h_hbar)

    cd = section("collapse")
    cvals = dict(lambda_rate=cd.get("lambda_rate", 0.0), r_c=cd.get("r_c", 1.0),
                 m0=cd.get("m0", 1.0), n_nucleons=cd.get("n_nucleons", 1),
                 hbar=cd.get("hbar", 1.0), mass=cd.get("mass"), gamma=cd.get("gamma"))
    c_problems = validate_collapse_params(**cvals)
    errors.extend(f"collapse.{p}" for p in c_problems)
    params = None
    if not c_problems:
        cvals.pop("gamma")
        params = CollapseParams(**cvals)

    td = section("time", required=True)
    t_final = number("time", "t_final", td.get("t_final"), positive=True) if td else None
    dt = number("time", "dt", td.get("dt"), positive=True) if td else None
    time_spec = None
    if t_final is not None and dt is not None:
        if "sample_times" in td:
            st = td["sample_times"]
            if not isinstance(st, list) or not st or not all(
                    isinstance(v, (int, float)) and not isinstance(v, bool) for v in st):
                errors.append("time.sample_times: must be a non-empty list of numbers")
                st = None
            elif any(b < a for a, b in zip(st, st[1:])) or st[0] < 0 or st[-1] > t_final:
                errors.append("time.sample_times: must be sorted within [0, t_final]")
                st = None
        else:
            n_samples = integer("time", "n_samples", td.get("n_samples", 11), 2)
            st = np.linspace(0, t_final, n_samples).tolist() if n_samples else None
        if st is not None:
            time_spec = TimeSpec(t_final, dt, tuple(float(v) for v in st))
        if grid is not None and h_spec is not None:
            bound = dt_max(grid, h_spec.build(grid))
            if dt > bound:
                errors.append(f"time.dt: {dt} exceeds the propagator stability bound "
                              f"dt_max={bound:.6g}")

    ed = section("ensemble")
    n_traj = integer("ensemble", "n_trajectories", ed.get("n_trajectories", 1), 1)
    seed = integer("ensemble", "master_seed", ed.get("master_seed", 0), 0)
    stop_mass = ed.get("stop_mass")
    if stop_mass is not None:
        stop_mass = number("ensemble", "stop_mass", stop_mass)
        if stop_mass is not None and not 0.5 < stop_mass < 1:
            errors.append("ensemble.stop_mass: must lie in (0.5, 1)")
    scheme = ed.get("scheme", "compensated")
    if scheme not in ("compensated", "euler"):
        errors.append(f"ensemble.scheme: must be 'compensated' or 'euler', got {scheme!r}")
    if stop_mass is not None and model != "csl":
        errors.append("ensemble.stop_mass: only meaningful for model=csl")

    od = section("output")
    fmt = od.get("format", "tree")
    if fmt not in FORMATS:
        errors.append(f"output.format: must be one of {list(FORMATS)}, got {fmt!r}")
    path = od.get("path")
    if path is not None and not isinstance(path, str):
        errors.append("output.path: must be a string")

    if model == "schrodinger" and params is not None and params.lambda_rate != 0:
        errors.append("collapse.lambda_rate: must be 0 for model=schrodinger")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(model, grid_spec, state_spec, h_spec, params, time_spec,
                            EnsembleSpec(n_traj, seed, stop_mass, scheme),
                            OutputSpec(path, fmt))
