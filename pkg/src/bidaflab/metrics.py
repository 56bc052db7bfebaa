"""Span-extraction scoring: EM, token-bag F1 and answer/no-answer accuracy.

Predictions are plain answer strings ("" means abstain).  Gold examples may
carry several reference answers; EM and F1 take the max over references.
"""

from __future__ import annotations

import collections
import re
import string
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b", re.UNICODE)
_PUNCT = set(string.punctuation)


@dataclass
class EvalResult:
    em: float
    f1: float
    avna: float
    n: int

    def as_dict(self) -> dict:
        return {"EM": self.em, "F1": self.f1, "AvNA": self.avna, "N": self.n}


def normalize_answer(s: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLE_RE.sub(" ", s)
    return " ".join(s.split())


def _gold_norms(golds: Sequence[str]) -> list[str]:
    norms = [normalize_answer(g) for g in golds]
    return norms if norms else [""]


def exact_match(pred: str, golds: Sequence[str]) -> int:
    pred_norm = normalize_answer(pred)
    return int(any(pred_norm == g for g in _gold_norms(golds)))


def _f1_single(pred_tokens: list[str], gold_norm: str) -> float:
    gold_tokens = gold_norm.split()
    if not pred_tokens or not gold_tokens:
        # abstention agrees with abstention, disagrees with an answer
        return float(pred_tokens == gold_tokens)
    common = collections.Counter(pred_tokens) & collections.Counter(gold_tokens)
    n_same = sum(common.values())
    if n_same == 0:
        return 0.0
    precision = n_same / len(pred_tokens)
    recall = n_same / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1_score(pred: str, golds: Sequence[str]) -> float:
    pred_tokens = normalize_answer(pred).split()
    return max(_f1_single(pred_tokens, g) for g in _gold_norms(golds))


def avna(pred_has_answer: bool, gold_has_answer: bool) -> int:
    return int(bool(pred_has_answer) == bool(gold_has_answer))


class MissingPredictionError(KeyError):
    pass


def evaluate_predictions(preds: Mapping[str, str], golds: Iterable) -> EvalResult:
    """Score an id->answer map against gold examples.

    Each gold needs .id, .is_impossible and .answers (list of (text, start)
    pairs or strings).  Raises MissingPredictionError listing any gold ids
    absent from preds.
    """
    golds = list(golds)
    missing = [g.id for g in golds if g.id not in preds]
    if missing:
        raise MissingPredictionError(
            f"predictions missing for {len(missing)} ids: {missing[:10]}")
    em_total = f1_total = avna_total = 0.0
    for g in golds:
        texts = [a[0] if isinstance(a, (tuple, list)) else a for a in g.answers]
        gold_answers = [] if g.is_impossible else texts
        pred = preds[g.id]
        em_total += exact_match(pred, gold_answers)
        f1_total += f1_score(pred, gold_answers)
        avna_total += avna(pred != "", not g.is_impossible)
    n = len(golds)
    if n == 0:
        return EvalResult(0.0, 0.0, 0.0, 0)
    return EvalResult(100.0 * em_total / n, 100.0 * f1_total / n,
                      100.0 * avna_total / n, n)
