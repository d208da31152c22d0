"""Negotiation dialogue modeling toolkit: strategy graphs, graph-attention
encoders with hierarchical pooling, multi-task training, interpretability
reports, and a live negotiation service."""

from .corpus import (
    Corpus,
    Dialogue,
    DialogueTurn,
    Outcome,
    RatioBoundaries,
    Scenario,
    build_token_vocab,
    compute_ratio,
    fit_class_boundaries,
    load_corpus,
    placeholder_to_price,
    price_to_placeholder,
    ratio_to_class,
    save_corpus,
)
from .graphbuild import StrategyGraph, build_da_graph, build_graph, extend_graph
from .model import ModelConfig, NegotiationModel, load_checkpoint, save_checkpoint
from .train import evaluate, fit

__version__ = "0.1.0"

__all__ = [
    "Corpus", "Dialogue", "DialogueTurn", "Outcome", "RatioBoundaries", "Scenario",
    "StrategyGraph", "ModelConfig", "NegotiationModel",
    "build_token_vocab", "build_da_graph", "build_graph", "extend_graph",
    "compute_ratio", "fit_class_boundaries", "ratio_to_class",
    "load_corpus", "save_corpus", "price_to_placeholder", "placeholder_to_price",
    "load_checkpoint", "save_checkpoint", "fit", "evaluate",
]
