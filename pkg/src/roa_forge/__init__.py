"""Learned, certified robust domains of attraction for discrete-time uncertain systems."""
from .dynamics import SYSTEM_IDS, get_system
from .estimator import NeuralValueRegressor, RoaCertifier, ValueTargetTransformer, prepare_system

__version__ = "0.1.0"

__all__ = [
    "SYSTEM_IDS",
    "get_system",
    "prepare_system",
    "ValueTargetTransformer",
    "NeuralValueRegressor",
    "RoaCertifier",
]
