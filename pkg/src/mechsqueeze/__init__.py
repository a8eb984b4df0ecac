"""
mechsqueeze: conditional mechanical squeezing in a detuned optical cavity

A Python library and CLI that simulates the optomechanical record, identifies the
cavity detuning from the optical spring, synthesizes the causal Wiener filters and
estimates the conditional mechanical state and its purity.
"""

__version__ = "0.1.0"

from .core.params import SystemParams, build_params, table1_params
from .core.langevin import build_model, simulate
from .core.wiener import synthesize
from .core.estimate import ConditionalState, condition, residual_state
from .core.loader import DataLoader
from .core.exporter import DataExporter
from .core.pipeline import RunConfig, run

__all__ = [
    "SystemParams", "build_params", "table1_params",
    "build_model", "simulate", "synthesize",
    "ConditionalState", "condition", "residual_state",
    "DataLoader", "DataExporter", "RunConfig", "run",
]
