"""Per-token representations: word vectors, char-CNN, highway fusion and the
contextual bi-directional pass.

The word-vector matrix stays frozen; only the OOV and NULL rows train.
Toggling use_char changes the fused width (d_w vs d_w + char_filters) and the
parameter set, nothing downstream of the contextual output width 2h.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import NULL_ID, OOV_ID
from .nn import BiLstm, Module, ModuleList, Parameter, apply_dropout, conv_maxpool_batch
from .rng import RngStream
from .tensor import Tensor


@dataclass
class EmbeddingConfig:
    word_dim: int = 50
    use_char: bool = False
    char_dim: int = 16
    char_filters: int = 64
    char_kernel: int = 5
    hidden: int = 32
    highway_layers: int = 2
    dropout: float = 0.2

    @property
    def fused_dim(self) -> int:
        return self.word_dim + (self.char_filters if self.use_char else 0)


class WordEmbedding(Module):
    """Frozen row lookup plus trainable OOV/NULL rows."""

    def __init__(self, matrix: np.ndarray):
        super().__init__()
        frozen = np.array(matrix, copy=True)
        frozen[OOV_ID] = 0
        frozen[NULL_ID] = 0
        self.matrix = Tensor(frozen)  # constant, never updated
        self.special = Parameter((2, matrix.shape[1]), ("zeros",))

    def forward(self, ids: np.ndarray) -> Tensor:
        base = T.lookup(self.matrix, ids)
        dtype = self.special.dtype
        oov = np.asarray(ids == OOV_ID, dtype=dtype)[..., None]
        null = np.asarray(ids == NULL_ID, dtype=dtype)[..., None]
        oov_row = T.narrow(self.special, 0, 0, 1)
        null_row = T.narrow(self.special, 0, 1, 1)
        out = T.add(base, T.mul(Tensor(oov), oov_row))
        return T.add(out, T.mul(Tensor(null), null_row))

    __call__ = forward

    def set_dtype(self, dtype) -> None:
        self.matrix.data = self.matrix.data.astype(dtype)


def embed_words(ids: np.ndarray, embedder: WordEmbedding) -> Tensor:
    if ids.size and int(ids.max()) >= embedder.matrix.shape[0]:
        raise IndexError(
            f"word id {int(ids.max())} out of range for vocab of "
            f"{embedder.matrix.shape[0]}")
    return embedder.forward(ids)


class CharEmbedding(Module):
    """Char-id lookup -> 1-D conv -> ReLU -> max-over-time, per token."""

    def __init__(self, n_chars: int, char_dim: int, n_filters: int, kernel: int):
        super().__init__()
        self.kernel = kernel
        self.emb = Parameter((n_chars, char_dim), ("uniform", -0.5, 0.5))
        self.filters = Parameter((kernel, char_dim, n_filters), ("xavier",))
        self.bias = Parameter((n_filters,), ("zeros",))

    def forward(self, char_ids: np.ndarray) -> Tensor:
        bsz, steps, width = char_ids.shape
        flat_ids = char_ids.reshape(bsz * steps, width)
        vecs = T.lookup(self.emb, flat_ids)
        # zero out PAD chars so padding never contributes to any window
        keep = np.asarray(flat_ids != 0, dtype=self.emb.dtype)[..., None]
        vecs = T.mul(vecs, Tensor(keep))
        pooled = conv_maxpool_batch(vecs, self.filters, self.bias, self.kernel)
        return T.reshape(pooled, (bsz, steps, pooled.shape[1]))

    __call__ = forward


class HighwayFuse(Module):
    """Gated fusion layers: y = g * relu(W_h x + b_h) + (1 - g) * x."""

    def __init__(self, dim: int, layers: int = 2):
        super().__init__()
        mods = []
        for _ in range(layers):
            layer = Module()
            layer.w_gate = Parameter((dim, dim), ("xavier",))
            layer.b_gate = Parameter((dim,), ("zeros",))
            layer.w_transform = Parameter((dim, dim), ("xavier",))
            layer.b_transform = Parameter((dim,), ("zeros",))
            mods.append(layer)
        self.layers = ModuleList(mods)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            gate = T.sigmoid(T.add(T.matmul(x, layer.w_gate), layer.b_gate))
            transform = T.relu(T.add(T.matmul(x, layer.w_transform),
                                     layer.b_transform))
            carry = T.sub(Tensor(np.asarray(1.0, dtype=x.dtype)), gate)
            x = T.add(T.mul(gate, transform), T.mul(carry, x))
        return x

    __call__ = forward


def highway_fuse(x: Tensor, fuser: HighwayFuse) -> Tensor:
    return fuser.forward(x)


class EmbeddingLayer(Module):
    """word (+ optional char) -> highway fusion -> contextual BiLSTM, 2h wide.

    Shared between context and question inputs.
    """

    def __init__(self, cfg: EmbeddingConfig, word_matrix: np.ndarray, n_chars: int):
        super().__init__()
        self.cfg = cfg
        self.word = WordEmbedding(word_matrix)
        if cfg.use_char:
            self.char = CharEmbedding(n_chars, cfg.char_dim, cfg.char_filters,
                                      cfg.char_kernel)
        self.fuse = HighwayFuse(cfg.fused_dim, cfg.highway_layers)
        self.contextual = BiLstm(cfg.fused_dim, cfg.hidden)

    def forward(self, ids: np.ndarray, char_ids: np.ndarray, mask: np.ndarray,
                rng: RngStream | None = None) -> Tensor:
        parts = [embed_words(ids, self.word)]
        if self.cfg.use_char:
            parts.append(self.char(char_ids))
        fused = T.concat(parts, axis=-1) if len(parts) > 1 else parts[0]
        fused = self.fuse(fused)
        fused = apply_dropout(fused, self.cfg.dropout, rng, self.training)
        return self.contextual(fused, mask)

    __call__ = forward


def contextual_encode(fused: Tensor, mask: np.ndarray, encoder: BiLstm) -> Tensor:
    return encoder(fused, mask)
