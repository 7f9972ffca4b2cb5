"""Distributed HMM filtering over sensor networks with ADMM average consensus."""
from .errors import (AssumptionError, AssumptionWarning, DhmmError, ModelValidationError, NumericError,
                     ParameterError, TopologyError)
from .graph import GraphTopology, sample_connected_rgg, sample_rgg, is_connected
from .mixing import MixingMatrix, build_mixing, max_degree_chain, metropolis_weights, spectrum_report
from .hmm import HmmModel, SensorModel, asilomar_v, simulate, run_centralized
from .dfilter import run_distributed, l1_disagreement

__version__ = "0.1.0"

__all__ = [
    "AssumptionError", "AssumptionWarning", "DhmmError", "ModelValidationError", "NumericError",
    "ParameterError", "TopologyError", "GraphTopology", "sample_connected_rgg", "sample_rgg",
    "is_connected", "MixingMatrix", "build_mixing", "max_degree_chain", "metropolis_weights",
    "spectrum_report", "HmmModel", "SensorModel", "asilomar_v", "simulate", "run_centralized",
    "run_distributed", "l1_disagreement",
]
