"""Experiment driver and command-line interface."""

from .config import ExperimentConfig, RateReport, fit_slope, variation
from .experiments import (dirichlet_sweep, expansion_remainder, exponential_solution, green_sweep,
                          homogenization_sweep, make_domain, nontangential_max, square_function)
from .main import build_parser, main

__all__ = ["ExperimentConfig", "RateReport", "build_parser", "dirichlet_sweep", "expansion_remainder",
           "exponential_solution", "fit_slope", "green_sweep", "homogenization_sweep", "main",
           "make_domain", "nontangential_max", "square_function", "variation"]
