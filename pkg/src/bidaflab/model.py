"""Full question-answering model: embeddings -> attention -> deep encoder ->
span output, plus batched prediction helpers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionFlow
from .data import Batch
from .embedding import EmbeddingConfig, EmbeddingLayer
from .encoder import EncoderVariant, ModelEncoder, parse_variant
from .output import (OutputLayer, SpanPrediction, decode_batch,
                     detokenize_answer, span_loss)
from .nn import Module
from .rng import RngStream
from .tensor import Tensor


@dataclass
class ModelConfig:
    variant: str = "baseline"
    use_char: bool = False
    word_dim: int = 50
    char_dim: int = 16
    char_filters: int = 64
    char_kernel: int = 5
    hidden: int = 32
    highway_layers: int = 2
    dropout: float = 0.2
    ensemble_k: int = 0
    max_answer_len: int = 15

    def embedding_config(self) -> EmbeddingConfig:
        return EmbeddingConfig(
            word_dim=self.word_dim, use_char=self.use_char,
            char_dim=self.char_dim, char_filters=self.char_filters,
            char_kernel=self.char_kernel, hidden=self.hidden,
            highway_layers=self.highway_layers, dropout=self.dropout)


class QAModel(Module):
    def __init__(self, cfg: ModelConfig, word_matrix: np.ndarray, n_chars: int):
        super().__init__()
        self.cfg = cfg
        self.variant: EncoderVariant = parse_variant(cfg.variant)
        self.embedding = EmbeddingLayer(cfg.embedding_config(), word_matrix,
                                        n_chars)
        self.attention = AttentionFlow(2 * cfg.hidden)
        self.encoder = ModelEncoder(self.variant, cfg.hidden, cfg.dropout)
        self.output = OutputLayer(cfg.hidden, cfg.ensemble_k)

    def initialize(self, seed: int, dtype=np.float64) -> "QAModel":
        super().initialize(seed, dtype)
        self.embedding.word.set_dtype(dtype)
        return self

    def forward(self, batch: Batch,
                rng: RngStream | None = None) -> tuple[Tensor, Tensor]:
        """Start/end probability distributions over context positions."""
        c = self.embedding(batch.ctx_ids, batch.ctx_chars, batch.ctx_mask, rng)
        q = self.embedding(batch.q_ids, batch.q_chars, batch.q_mask, rng)
        g = self.attention(c, q, batch.ctx_mask, batch.q_mask)
        m, layer_outputs = self.encoder(g, batch.ctx_mask, rng)
        return self.output(g, m, layer_outputs, batch.ctx_mask)

    __call__ = forward

    def loss(self, batch: Batch, rng: RngStream | None = None) -> Tensor:
        p_start, p_end = self.forward(batch, rng)
        return span_loss(p_start, p_end, batch.gold_start, batch.gold_end)

    def predict_batch(self, batch: Batch) -> dict[str, tuple[str, SpanPrediction]]:
        """Deterministic decode: id -> (answer text, span)."""
        was_training = self.training
        self.eval()
        try:
            with T.no_grad():
                p_start, p_end = self.forward(batch, rng=None)
        finally:
            self.train(was_training)
        spans = decode_batch(p_start.data, p_end.data, self.cfg.max_answer_len)
        out = {}
        for ex, span in zip(batch.examples, spans):
            out[ex.id] = (detokenize_answer(ex, span), span)
        return out
