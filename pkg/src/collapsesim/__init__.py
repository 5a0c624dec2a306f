"""Trajectory simulation of GRW and CSL spontaneous-collapse dynamics on a 1-D lattice."""

__version__ = "0.1.0"

from .state import (CollapseParams, GridMismatchError, LatticeGrid, WaveFunction,
                    gamma_from_lambda, gamma_from_lambda_3d, make_cat, make_delta,
                    make_gaussian_packet, mass_density, norm_squared, normalize, superpose)
from .propagator import (HamiltonianSpec, SplitStepPropagator, UnstableTimestepError, dt_max,
                         evolve_unitary, step_unitary)
from .observables import (LobeTemplates, TwoLobeDensityMatrix, count_lobes,
                          reduce_to_two_lobes, trace_distance)
from .grw import (CollapsedToZeroError, JumpEvent, TrajectoryResult, apply_jump, collapse_once,
                  jump_probability_density, run_grw_trajectory, sample_jump_center)
from .csl import (CSLStepper, SmearingKernel, WienerField, apply_mass_density_operator,
                  csl_step, run_csl_ensemble, run_csl_trajectory, sample_wiener_step)
from .stats import (EnsembleAccumulator, EnsembleSummary, TrajectoryRecord, born_rule_test,
                    calibrate_decay_rate, coherence_decay_fit, lindblad_oracle_evolve)
from .seeding import trajectory_rng, trajectory_seed

