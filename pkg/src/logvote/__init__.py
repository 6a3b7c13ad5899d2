"""Ensemble anomaly detection for unstable logs.

Pipeline: template mining -> sequence partitioning -> cached majority vote
over count-vector ML models and a prompted LLM backend -> evaluation.
"""
from .cache import PredictionCache
from .core import Label, LabeledDataset, LabeledSequence, LogSequence, LogTemplate, label_from_int
from .ensemble import EnsembleConfig, EnsemblePipeline, majority_vote
from .parser import DrainParser, ParserConfig, TemplateStore

__all__ = [
    "DrainParser",
    "EnsembleConfig",
    "EnsemblePipeline",
    "Label",
    "LabeledDataset",
    "LabeledSequence",
    "LogSequence",
    "LogTemplate",
    "ParserConfig",
    "PredictionCache",
    "TemplateStore",
    "label_from_int",
    "majority_vote",
]
