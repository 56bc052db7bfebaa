"""Span prediction: start/end distributions, layer-output ensembling, the
training loss, best-span decoding and answer-text recovery.

Context position 0 is the abstention sentinel: the span (0, 0) means
"no answer" and decodes to the empty string.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import TokenizedExample, detokenize
from .nn import BiLstm, Linear, Module, Parameter
from .tensor import Tensor

DEFAULT_MAX_ANSWER_LEN = 15


@dataclass
class SpanPrediction:
    start: int
    end: int
    prob: float
    is_no_answer: bool

    @classmethod
    def make(cls, start: int, end: int, prob: float) -> "SpanPrediction":
        return cls(start, end, prob, start == 0 and end == 0)


class OutputLayer(Module):
    """Start logits from [G;M], end logits from [G;M2] with M2 = BiLSTM(M).

    With ensemble_k >= 1 the input to the end-side recurrence is the last k
    stack outputs concatenated and projected back to 2h; start logits always
    use the final stack output.
    """

    def __init__(self, hidden: int, ensemble_k: int = 0):
        super().__init__()
        two_h = 2 * hidden
        self.ensemble_k = ensemble_k
        self.w_start = Parameter((8 * hidden + two_h, 1), ("xavier",))
        self.w_end = Parameter((8 * hidden + two_h, 1), ("xavier",))
        self.end_rnn = BiLstm(two_h, hidden)
        if ensemble_k >= 1:
            self.ensemble_proj = Linear(two_h * ensemble_k, two_h)

    def forward(self, g: Tensor, m: Tensor, layer_outputs: list[Tensor],
                mask: np.ndarray) -> tuple[Tensor, Tensor]:
        p_start = self._distribution(g, m, self.w_start, mask)
        end_input = m
        if self.ensemble_k >= 1:
            end_input = ensemble_inputs(layer_outputs, self.ensemble_k,
                                        self.ensemble_proj)
        m2 = self.end_rnn(end_input, mask)
        p_end = self._distribution(g, m2, self.w_end, mask)
        return p_start, p_end

    __call__ = forward

    @staticmethod
    def _distribution(g: Tensor, m: Tensor, w: Tensor, mask: np.ndarray) -> Tensor:
        cat = T.concat([g, m], axis=-1)
        logits = T.matmul(cat, w)
        logits = T.reshape(logits, logits.shape[:2])
        return T.masked_softmax(logits, mask, axis=-1)


def span_logits(g: Tensor, m: Tensor, layer_outputs: list[Tensor],
                mask: np.ndarray, layer: OutputLayer) -> tuple[Tensor, Tensor]:
    return layer.forward(g, m, layer_outputs, mask)


def ensemble_inputs(layer_outputs: list[Tensor], k: int,
                    proj: Linear) -> Tensor:
    """Concatenate the last k stack outputs and project back to 2h."""
    if k < 1:
        raise ValueError("ensemble needs k >= 1")
    if k > len(layer_outputs):
        raise ValueError(
            f"ensemble k={k} exceeds the {len(layer_outputs)} available "
            f"stack outputs")
    chosen = layer_outputs[-k:]
    cat = T.concat(chosen, axis=-1) if len(chosen) > 1 else chosen[0]
    return proj(cat)


def span_loss(p_start: Tensor, p_end: Tensor, gold_start: np.ndarray,
              gold_end: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the gold (start, end) pair."""
    nll_start = T.neg(T.log(T.gather_index(p_start, gold_start)))
    nll_end = T.neg(T.log(T.gather_index(p_end, gold_end)))
    return T.tmean(T.add(nll_start, nll_end))


def decode_best_span(p_start: np.ndarray, p_end: np.ndarray,
                     max_len: int = DEFAULT_MAX_ANSWER_LEN) -> SpanPrediction:
    """Most probable legal span, abstention sentinel included.

    Candidates are (0,0) plus every (i,j) with 1 <= i <= j < N and
    j - i <= max_len; ties go to the smallest i, then smallest j.
    """
    n = p_start.shape[0]
    best_i, best_j = 0, 0
    best_p = float(p_start[0] * p_end[0])
    for i in range(1, n):
        hi = min(n - 1, i + max_len)
        for j in range(i, hi + 1):
            p = float(p_start[i] * p_end[j])
            if p > best_p:
                best_i, best_j, best_p = i, j, p
    return SpanPrediction.make(best_i, best_j, best_p)


def decode_batch(p_start: np.ndarray, p_end: np.ndarray,
                 max_len: int = DEFAULT_MAX_ANSWER_LEN) -> list[SpanPrediction]:
    return [decode_best_span(p_start[b], p_end[b], max_len)
            for b in range(p_start.shape[0])]


def detokenize_answer(example: TokenizedExample, span: SpanPrediction) -> str:
    """Answer text for a batch-coordinate span; "" for the sentinel."""
    if span.is_no_answer:
        return ""
    start, end = span.start - 1, span.end - 1
    return detokenize(example.context, example.context_tokens,
                      example.context_offsets, (start, end))
