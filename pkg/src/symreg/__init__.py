"""Symbolic regression by island-model genetic programming with Levenberg-Marquardt parameter fitting."""

from .config import (
    FitOptions,
    Grammar,
    MutationConfig,
    OperatorSet,
    Options,
    ResidualConfig,
    SelectionConfig,
)
from .evolution import HallOfFame, Individual, RunState, instantiate_individual, run
from .exprtree import parse, to_text
from .fitting import Dataset, Measures, compute_measures, fit_params_lm

__all__ = [
    "Dataset",
    "FitOptions",
    "Grammar",
    "HallOfFame",
    "Individual",
    "Measures",
    "MutationConfig",
    "OperatorSet",
    "Options",
    "ResidualConfig",
    "RunState",
    "SelectionConfig",
    "compute_measures",
    "fit_params_lm",
    "instantiate_individual",
    "parse",
    "run",
    "to_text",
]

__version__ = "0.1.0"
