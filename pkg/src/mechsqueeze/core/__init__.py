"""
Core functionality for mechsqueeze: model, simulation, signal processing,
identification, filtering, estimation and the run pipeline
"""

from .loader import DataLoader
from .exporter import DataExporter
from .pipeline import Pipeline, RunConfig

__all__ = ["DataLoader", "DataExporter", "Pipeline", "RunConfig"]
