"""Interaction-level contrastive student modelling for knowledge tracing and dropout prediction."""

from .data import FeatureSchema, Interaction, SequenceBatch, StudentSequence, TaskKind, build_batch
from .errors import SaiclError

__all__ = [
    "FeatureSchema",
    "Interaction",
    "SaiclError",
    "SequenceBatch",
    "StudentSequence",
    "TaskKind",
    "build_batch",
]
__version__ = "0.1.0"
