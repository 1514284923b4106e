"""Exact multivariate optimal allocation for stratified sampling."""

__version__ = "0.1.0"

from .bethel import BethelResult, bethel_continuous, bethel_rounded
from .formulation import BipModel, build_bip, check_equivalence, decode, export_lp
from .model import (
    Allocation,
    AllocationProblem,
    PopulationFrame,
    StratumSummary,
    SurveySpec,
    reduce,
    validate_survey_spec,
)
from .solver import RelaxationSolution, SolveReport, brute_force, solve_bnb, solve_relaxation
from .stats import Evaluation, evaluate, summarize, variance_of_total

__all__ = [
    "Allocation",
    "AllocationProblem",
    "BethelResult",
    "BipModel",
    "Evaluation",
    "PopulationFrame",
    "RelaxationSolution",
    "SolveReport",
    "StratumSummary",
    "SurveySpec",
    "bethel_continuous",
    "bethel_rounded",
    "brute_force",
    "build_bip",
    "check_equivalence",
    "decode",
    "evaluate",
    "export_lp",
    "reduce",
    "solve_bnb",
    "solve_relaxation",
    "summarize",
    "validate_survey_spec",
    "variance_of_total",
]
