"""Doubly robust excursion-effect estimation for micro-randomized trials.

Modules
-------
data        panel representation and validation
nuisance    logistic working models, cross-fitting
weights     stabilized / truncated weights and diagnostics
estimators  IPW, EMEE, DR-EMEE, DR-EMEE2
variance    influence-function, corrected and cluster-robust SEs
simulation  synthetic trials and Monte Carlo scenarios
ingestion   long-table loading, wearable-study recipes, panel archives
cli         command-line interface
"""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .analysis import AnalysisConfig, analyze
from .data import PanelDataset, design_matrix, validate
from .errors import (ConfigurationError, DataError, DegenerateArmError, DegenerateClusterError,
                     DegenerateFoldError, ExcursionError, NumericalError, ScenarioFailure, SchemaError)
from .estimators import METHODS, EstimateReport, estimate
from .kernels import BACKEND
from .nuisance import NuisanceSpec, build_nuisance, cross_fit, fit_logistic, from_design, predict_prob
from .variance import InferenceResult, infer
from .weights import build_weights, truncate

__all__ = [
    "AnalysisConfig", "analyze", "PanelDataset", "design_matrix", "validate", "ConfigurationError",
    "DataError", "DegenerateArmError", "DegenerateClusterError", "DegenerateFoldError", "ExcursionError",
    "NumericalError", "ScenarioFailure", "SchemaError", "METHODS", "EstimateReport", "estimate", "BACKEND",
    "NuisanceSpec", "build_nuisance", "cross_fit", "fit_logistic", "from_design", "predict_prob",
    "InferenceResult", "infer", "build_weights", "truncate",
]
