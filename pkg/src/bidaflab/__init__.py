"""Desk-scale BiDAF question answering with pluggable deep encoder stacks.

The pipeline: word/char embeddings with highway fusion -> contextual
encoding -> bidirectional attention -> a configurable model-encoder stack
(baseline, bypass/residual, highway or densenet wiring) -> span output with
an abstention sentinel.  Everything runs on an in-package reverse-mode
tensor library and is reproducible from (config, seed).
"""

__version__ = "0.1.0"

from .data import SquadExample, TokenizedExample, Vocabulary, load_squad_json
from .encoder import EncoderVariant, parse_variant
from .metrics import EvalResult, evaluate_predictions, exact_match, f1_score
from .model import ModelConfig, QAModel
from .output import SpanPrediction, decode_best_span
from .rng import RngStream
from .tensor import Tensor
from .train import MetricRecord, RunConfig, evaluate_split, sweep, train

__all__ = [
    "EncoderVariant", "EvalResult", "MetricRecord", "ModelConfig",
    "QAModel", "RngStream", "RunConfig", "SpanPrediction", "SquadExample",
    "Tensor", "TokenizedExample", "Vocabulary", "decode_best_span",
    "evaluate_predictions", "evaluate_split", "exact_match", "f1_score",
    "load_squad_json", "parse_variant", "sweep", "train",
]
