"""Durational event models: fitting, simulation and benchmarking."""

__version__ = "0.1.0"

from .errors import DurationalError
from .events import CovariateTable, DurationalEvent, EventStream, make_stream, parse_covariates, parse_events
from .model import BaselineGrid, ModelSpec, DURATION, INCIDENCE
from .grid import LikelihoodGrid, build_grid
from .likelihood import ParamVector, log_likelihood, full_derivatives
from .estimator import FitOptions, FitResult, fit_block_coordinate, fit_model, fit_newton_raphson
from .inference import alpha_covariance, effect_table, greedy_select
from .simulator import SimConfig, simulate

__all__ = [
    "__version__", "DurationalError",
    "CovariateTable", "DurationalEvent", "EventStream", "make_stream", "parse_covariates",
    "parse_events", "BaselineGrid", "ModelSpec", "DURATION", "INCIDENCE",
    "LikelihoodGrid", "build_grid", "ParamVector", "log_likelihood", "full_derivatives",
    "FitOptions", "FitResult", "fit_block_coordinate", "fit_model", "fit_newton_raphson",
    "alpha_covariance", "effect_table", "greedy_select", "SimConfig", "simulate",
]
