"""Positivity-preserving backward Euler simulation of the Ait-Sahalia rate model with Poisson jumps."""

from .model import CASE_1, CASE_2, JumpSpec, ModelParams, classify_regime, monotonicity_constant
from .scheme import SchemeKind, simulate_batch, simulate_path

__all__ = [
    "CASE_1",
    "CASE_2",
    "JumpSpec",
    "ModelParams",
    "SchemeKind",
    "classify_regime",
    "monotonicity_constant",
    "simulate_batch",
    "simulate_path",
]

__version__ = "0.1.0"
