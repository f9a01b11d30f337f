"""Dual-interactive graph attention news recommender.

Candidate news are enriched with a semantic-augmented news graph, user
history is modeled as a heterogeneous news-topic graph, and the two graph
channels exchange context through stacked interactive attention layers.
"""

__version__ = "0.1.0"

from .config import RunConfig, load_config
from .model import DigatModel, ModelConfig
from .sag import TfidfProvider, build_sag
from .training import TrainConfig, evaluate, train

__all__ = [
    "DigatModel",
    "ModelConfig",
    "RunConfig",
    "TfidfProvider",
    "TrainConfig",
    "build_sag",
    "evaluate",
    "load_config",
    "train",
]
