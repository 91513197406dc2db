"""Piecewise-constant stochastic control barrier certificates on grid partitions."""

from ._core import BACKEND
from .controller import Controller, candidate_controls, controller_from_csv, greedy_inner
from .geometry import Partition, PartitionError, build_partition, whiten
from .kernel import kernel_matrix, kernel_row, transition_prob
from .lp import LPModel, LPSolution, solve_lp
from .relaxation import BoundsMatrix, bound_all, bound_row, bound_transition
from .synthesis import Barrier, SynthesisOptions, SynthesisResult, barrier_from_csv, synthesize
from .system import BENCHMARKS, ConfigError, SystemSpec, load_benchmark, load_spec
from .validation import binomial_bound, check_certificate, simulate

__version__ = "0.1.0"

__all__ = ["BACKEND", "BENCHMARKS", "Barrier", "BoundsMatrix", "ConfigError", "Controller", "LPModel",
           "LPSolution", "Partition", "PartitionError", "SynthesisOptions", "SynthesisResult", "SystemSpec",
           "barrier_from_csv", "binomial_bound", "bound_all", "bound_row", "bound_transition", "build_partition",
           "candidate_controls", "check_certificate", "controller_from_csv", "greedy_inner", "kernel_matrix",
           "kernel_row", "load_benchmark", "load_spec", "simulate", "solve_lp", "synthesize", "transition_prob",
           "whiten"]
