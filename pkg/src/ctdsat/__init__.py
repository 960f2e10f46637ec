"""Deterministic continuous-time k-SAT solving and hardness measurement."""

from .basin import BasinMap, basin_map, boundary_cells, box_dimension
from .clusters import (ClusterReport, block_cluster, cluster_report,
                       cluster_solutions, cluster_sweep, enumerate_solutions)
from .dynamics import (ContinuousState, IntegratorConfig, TrajectoryOutcome,
                       TrajectoryStatus, clause_cost, energy, initial_state,
                       integrate, raw_energy, velocity)
from .escape import (EscapeEstimate, SurvivalCurve, domain_radius, fit_kappa,
                     run_batch, sample_initial)
from .formula import (Assignment, DpllResult, EnsembleSpec, Formula, SatStatus,
                      add_clause, assignment_from_orthant, dimacs_read,
                      dimacs_write, dpll_sat, evaluate, formula_hash,
                      make_formula, random_ksat)
from .scaling import (HardnessRecord, HardnessSample, collapse_fit, eta_histogram,
                      fit_beta, fit_gamma, gaussian_fit, hardness_ensemble,
                      mean_hardness, rho_fraction, susceptibility)

__version__ = "0.1.0"
