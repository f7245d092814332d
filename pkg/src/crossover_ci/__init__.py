"""Confidence intervals for the treatment difference in a two-period crossover
trial that exploit the uncertain prior guess of no differential carryover."""

__version__ = "0.1.0"

from .estimator import CrossoverPriorInterval
from .model import (
    SummaryStats,
    TrialData,
    TrialDesign,
    TrialParams,
    VarianceModel,
    ratio_from_rho_tilde,
    rho_tilde_from_ratio,
    simulate_trial,
    standardize,
    summary_stats,
)
from .optimize import OptConfig, OptResult, OptimizationError, omega_table, optimize_interval
from .perf import QuadratureSpec, coverage, criterion, mc_coverage, min_coverage, perf_curve, sel
from .splines import Interval, IntervalFunctions, KnotGrid, construct_interval

__all__ = [
    "CrossoverPriorInterval",
    "Interval",
    "IntervalFunctions",
    "KnotGrid",
    "OptConfig",
    "OptResult",
    "OptimizationError",
    "QuadratureSpec",
    "SummaryStats",
    "TrialData",
    "TrialDesign",
    "TrialParams",
    "VarianceModel",
    "construct_interval",
    "coverage",
    "criterion",
    "mc_coverage",
    "min_coverage",
    "omega_table",
    "optimize_interval",
    "perf_curve",
    "ratio_from_rho_tilde",
    "rho_tilde_from_ratio",
    "sel",
    "simulate_trial",
    "standardize",
    "summary_stats",
]
