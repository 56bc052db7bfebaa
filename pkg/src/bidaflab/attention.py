"""Bidirectional attention: trilinear similarity, both attention directions
and the fused query-aware context representation.

Attention here is memory-less: each batch row's output depends only on that
row's context and question encodings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Module, Parameter
from .tensor import NEG_INF_SURROGATE, Tensor


@dataclass
class SimilarityMatrix:
    s: Tensor                 # [B x N x M], masked entries hold -1e30
    ctx_mask: np.ndarray      # [B x N]
    q_mask: np.ndarray        # [B x M]


def similarity(c: Tensor, q: Tensor, w_s: Tensor,
               ctx_mask: np.ndarray, q_mask: np.ndarray) -> SimilarityMatrix:
    """S[b,i,j] = w_s . [c_i ; q_j ; c_i * q_j], with masked entries -1e30.

    w_s is a [6h x 1] column; the three blocks weight the context, question
    and elementwise-product terms.
    """
    two_h = c.shape[2]
    if q.shape[2] != two_h or w_s.shape[0] != 3 * two_h:
        raise T.ShapeMismatchError(
            f"similarity: widths disagree: c={c.shape} q={q.shape} w={w_s.shape}")
    w_c = T.narrow(w_s, 0, 0, two_h)
    w_q = T.narrow(w_s, 0, two_h, two_h)
    w_dot = T.narrow(w_s, 0, 2 * two_h, two_h)
    part_c = T.matmul(c, w_c)                                   # [B,N,1]
    part_q = T.transpose_last2(T.matmul(q, w_q))                # [B,1,M]
    scaled = T.mul(c, T.reshape(w_dot, (two_h,)))
    part_dot = T.matmul(scaled, T.transpose_last2(q))           # [B,N,M]
    s = T.add(T.add(part_dot, part_c), part_q)
    pair_mask = (ctx_mask[:, :, None] & q_mask[:, None, :])
    keep = np.asarray(pair_mask, dtype=s.dtype)
    surrogate = Tensor(np.asarray((1.0 - keep) * NEG_INF_SURROGATE, dtype=s.dtype))
    s = T.add(T.mul(s, Tensor(keep)), surrogate)
    return SimilarityMatrix(s, np.asarray(ctx_mask, bool), np.asarray(q_mask, bool))


def context2query(sim: SimilarityMatrix, q: Tensor) -> Tensor:
    """Attend each context position over the question: [B x N x 2h]."""
    attn = T.masked_softmax(sim.s, sim.q_mask[:, None, :], axis=-1)
    return T.matmul(attn, q)


def query2context(sim: SimilarityMatrix, c: Tensor) -> Tensor:
    """One question-side summary of the context per batch row: [B x 2h]."""
    m = T.tmax(sim.s, axis=-1)                                  # [B,N]
    b = T.masked_softmax(m, sim.ctx_mask, axis=-1)
    summary = T.matmul(T.reshape(b, (b.shape[0], 1, b.shape[1])), c)
    return T.reshape(summary, (c.shape[0], c.shape[2]))


def fuse_g(c: Tensor, c2q: Tensor, q2c: Tensor) -> Tensor:
    """G_i = [c_i ; c2q_i ; c_i * c2q_i ; c_i * q2c]: [B x N x 8h]."""
    q2c_rows = T.reshape(q2c, (q2c.shape[0], 1, q2c.shape[1]))
    return T.concat([c, c2q, T.mul(c, c2q), T.mul(c, q2c_rows)], axis=-1)


class AttentionFlow(Module):
    def __init__(self, two_h: int):
        super().__init__()
        self.w_s = Parameter((3 * two_h, 1), ("xavier",))

    def forward(self, c: Tensor, q: Tensor, ctx_mask: np.ndarray,
                q_mask: np.ndarray) -> Tensor:
        sim = similarity(c, q, self.w_s, ctx_mask, q_mask)
        c2q = context2query(sim, q)
        q2c = query2context(sim, c)
        return fuse_g(c, c2q, q2c)

    __call__ = forward
