"""Corpus ingestion, tokenization, vocabularies and batch assembly.

File formats handled here:
  * SQuAD v2.0 JSON (data -> paragraphs -> qas, with is_impossible and
    answers[].text / answers[].answer_start)
  * word-vector text files, one token per line followed by its components

Batches reserve context position 0 for the NULL sentinel; a gold span of
(0, 0) encodes "no answer".
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .metrics import normalize_answer
from .rng import RngStream

PAD_ID = 0
OOV_ID = 1
NULL_ID = 2
PAD_TOKEN = "<pad>"
OOV_TOKEN = "<oov>"
NULL_TOKEN = "<null>"

MAX_WORD_LEN = 16

# Published sizes of the reference corpus splits this pipeline mirrors.
REFERENCE_SPLIT_SIZES = {"train": 129941, "dev": 6078, "test": 5915}

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class CorpusFormatError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


@dataclass
class SquadExample:
    id: str
    context: str
    question: str
    answers: list[tuple[str, int]]  # (text, char_start)
    is_impossible: bool

    def gold_texts(self) -> list[str]:
        return [] if self.is_impossible else [t for t, _ in self.answers]


@dataclass
class TokenizedExample:
    id: str
    context: str
    context_tokens: list[str]
    context_offsets: list[int]
    context_char_ids: np.ndarray  # [len(tokens) x MAX_WORD_LEN]
    question_tokens: list[str]
    question_char_ids: np.ndarray
    gold_span: Optional[tuple[int, int]]  # token indices, None = no answer
    gold_answer_texts: list[str]

    @property
    def is_impossible(self) -> bool:
        return self.gold_span is None


@dataclass
class Batch:
    ctx_ids: np.ndarray       # [B x N], position 0 is the NULL sentinel
    q_ids: np.ndarray         # [B x M]
    ctx_chars: np.ndarray     # [B x N x MAX_WORD_LEN]
    q_chars: np.ndarray       # [B x M x MAX_WORD_LEN]
    ctx_mask: np.ndarray      # bool, true exactly on non-PAD positions
    q_mask: np.ndarray
    gold_start: np.ndarray    # [B], sentinel-shifted; (0,0) = no answer
    gold_end: np.ndarray
    examples: list[TokenizedExample]

    @property
    def size(self) -> int:
        return self.ctx_ids.shape[0]


# -- ingestion -----------------------------------------------------------------

def load_squad_json(path: str) -> list[SquadExample]:
    """Parse an official-structure v2.0 file into flat examples."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise CorpusFormatError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(doc, dict) or "data" not in doc:
        raise CorpusFormatError(f"{path}: missing top-level 'data' field")
    out: list[SquadExample] = []
    for ai, article in enumerate(doc["data"]):
        paragraphs = article.get("paragraphs")
        if paragraphs is None:
            raise CorpusFormatError(f"{path}: data[{ai}] has no 'paragraphs'")
        for pi, para in enumerate(paragraphs):
            where = f"{path}: data[{ai}].paragraphs[{pi}]"
            context = para.get("context")
            if context is None:
                raise CorpusFormatError(f"{where} has no 'context'")
            for qi, qa in enumerate(para.get("qas", [])):
                qwhere = f"{where}.qas[{qi}]"
                try:
                    qid = str(qa["id"])
                    question = qa["question"]
                    impossible = bool(qa.get("is_impossible", False))
                    answers = []
                    for aj, ans in enumerate(qa.get("answers", [])):
                        text = ans["text"]
                        start = int(ans["answer_start"])
                        if context[start:start + len(text)] != text:
                            raise CorpusFormatError(
                                f"{qwhere}.answers[{aj}]: answer_start {start} "
                                f"does not point at {text!r}")
                        answers.append((text, start))
                except (KeyError, TypeError) as e:
                    raise CorpusFormatError(f"{qwhere}: malformed entry: {e}") from e
                if impossible:
                    answers = []
                out.append(SquadExample(qid, context, question, answers, impossible))
    return out


def write_squad_json(examples: Sequence[SquadExample], path: str,
                     title: str = "corpus") -> None:
    paragraphs = []
    for ex in examples:
        paragraphs.append({
            "context": ex.context,
            "qas": [{
                "id": ex.id,
                "question": ex.question,
                "answers": [{"text": t, "answer_start": s} for t, s in ex.answers],
                "is_impossible": ex.is_impossible,
            }],
        })
    doc = {"version": "v2.0", "data": [{"title": title, "paragraphs": paragraphs}]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, ensure_ascii=False)


# -- tokenization ----------------------------------------------------------------

def tokenize(text: str) -> list[tuple[str, int]]:
    """Lowercased word/punctuation tokens with character offsets.

    raw[offset : offset + len(token)] always case-folds back to the token.
    """
    return [(m.group().lower(), m.start()) for m in _TOKEN_RE.finditer(text)]


def align_span(example: SquadExample,
               tokens: Sequence[tuple[str, int]]) -> Optional[tuple[int, int]]:
    """Token window covering the first alignable gold answer.

    Returns None for unanswerable examples; raises AlignmentError when no
    gold answer overlaps any token.
    """
    if example.is_impossible or not example.answers:
        return None
    for text, char_start in example.answers:
        char_end = char_start + len(text)
        picked = [i for i, (tok, off) in enumerate(tokens)
                  if off < char_end and off + len(tok) > char_start]
        if picked:
            return picked[0], picked[-1]
    raise AlignmentError(
        f"example {example.id}: no token overlaps any gold answer")


# -- vocabularies -----------------------------------------------------------------

@dataclass
class Vocabulary:
    itos: list[str]
    stoi: dict[str, int]
    matrix: np.ndarray  # [V x d], rows aligned with ids

    def __len__(self) -> int:
        return len(self.itos)

    def id_of(self, token: str) -> int:
        return self.stoi.get(token, OOV_ID)


@dataclass
class CharVocabulary:
    stoi: dict[str, int]  # PAD_ID / OOV_ID reserved

    def __len__(self) -> int:
        return len(self.stoi) + 2

    def encode(self, token: str) -> np.ndarray:
        ids = np.zeros(MAX_WORD_LEN, dtype=np.int64)
        for i, ch in enumerate(token[:MAX_WORD_LEN]):
            ids[i] = self.stoi.get(ch, OOV_ID)
        return ids


def _ordered_types(counts: dict[str, int]) -> list[str]:
    return sorted(counts, key=lambda t: (-counts[t], t))


def build_vocab_tokens(examples: Sequence[SquadExample]) -> list[str]:
    """Corpus token types ordered by frequency then lexicographically."""
    counts: dict[str, int] = {}
    for ex in examples:
        for tok, _ in tokenize(ex.context):
            counts[tok] = counts.get(tok, 0) + 1
        for tok, _ in tokenize(ex.question):
            counts[tok] = counts.get(tok, 0) + 1
    return _ordered_types(counts)


def build_char_vocab(examples: Sequence[SquadExample]) -> CharVocabulary:
    counts: dict[str, int] = {}
    for ex in examples:
        for tok, _ in tokenize(ex.context) + tokenize(ex.question):
            for ch in tok:
                counts[ch] = counts.get(ch, 0) + 1
    stoi = {ch: i + 2 for i, ch in enumerate(_ordered_types(counts))}
    return CharVocabulary(stoi)


def load_glove_vectors(path: str, dim: int,
                       vocab_tokens: Sequence[str]) -> Vocabulary:
    """Build the id-aligned embedding matrix for a token list.

    Tokens absent from the file get the zero OOV vector; the PAD row is
    zero; the NULL row is zero here and trained downstream.
    """
    wanted = set(vocab_tokens)
    rows: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.rstrip("\n")
            if not stripped:
                continue
            parts = stripped.split(" ")
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise CorpusFormatError(
                    f"{path}: line {lineno}: expected {dim} components, "
                    f"got {len(values)}")
            if token in wanted:
                rows[token] = np.asarray([float(v) for v in values])
    return vectors_to_vocabulary(vocab_tokens, rows, dim)


def vectors_to_vocabulary(vocab_tokens: Sequence[str],
                          rows: dict[str, np.ndarray], dim: int) -> Vocabulary:
    itos = [PAD_TOKEN, OOV_TOKEN, NULL_TOKEN] + list(vocab_tokens)
    stoi = {t: i for i, t in enumerate(itos)}
    matrix = np.zeros((len(itos), dim))
    for token, vec in rows.items():
        matrix[stoi[token]] = vec
    return Vocabulary(itos, stoi, matrix)


# -- splitting --------------------------------------------------------------------

def split_corpus(examples: Sequence[SquadExample], fractions: Sequence[float],
                 seed: int) -> tuple[list[SquadExample], ...]:
    """Disjoint, exhaustive, deterministic shuffle split."""
    if not examples:
        raise ValueError("split_corpus: empty input")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    order = RngStream(seed).permutation(len(examples))
    bounds = [0]
    acc = 0.0
    for frac in fractions:
        acc += frac
        bounds.append(int(round(acc * len(examples))))
    bounds[-1] = len(examples)
    out = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        out.append([examples[i] for i in order[lo:hi]])
    return tuple(out)


# -- feature build ------------------------------------------------------------------

def prepare_examples(examples: Sequence[SquadExample],
                     char_vocab: CharVocabulary) -> tuple[list[TokenizedExample], int]:
    """Tokenize + align + encode chars; returns (kept, dropped_count).

    An answerable example is dropped (and counted) when no gold answer can
    be aligned to tokens, or when the aligned window does not re-detokenize
    to a gold answer under normalization.
    """
    kept: list[TokenizedExample] = []
    dropped = 0
    for ex in examples:
        ctx = tokenize(ex.context)
        if not ctx:
            dropped += 1
            continue
        try:
            span = align_span(ex, ctx)
        except AlignmentError:
            dropped += 1
            continue
        q = tokenize(ex.question)
        if not q:
            dropped += 1
            continue
        tokens = [t for t, _ in ctx]
        offsets = [o for _, o in ctx]
        if span is not None:
            detok = detokenize(ex.context, tokens, offsets, span)
            golds = {normalize_answer(t) for t, _ in ex.answers}
            if normalize_answer(detok) not in golds:
                dropped += 1
                continue
        kept.append(TokenizedExample(
            id=ex.id,
            context=ex.context,
            context_tokens=tokens,
            context_offsets=offsets,
            context_char_ids=np.stack([char_vocab.encode(t) for t in tokens]),
            question_tokens=[t for t, _ in q],
            question_char_ids=np.stack([char_vocab.encode(t) for t, _ in q]),
            gold_span=span,
            gold_answer_texts=ex.gold_texts(),
        ))
    return kept, dropped


def detokenize(context: str, tokens: Sequence[str], offsets: Sequence[int],
               span: tuple[int, int]) -> str:
    """Raw-text substring covered by a token span."""
    start, end = span
    return context[offsets[start]:offsets[end] + len(tokens[end])]


# -- batching ------------------------------------------------------------------------

def make_batches(examples: Sequence[TokenizedExample], batch_size: int,
                 vocab: Vocabulary, rng: Optional[RngStream] = None,
                 shuffle: bool = False) -> Iterator[Batch]:
    """Yield padded batches; shuffled order requires an rng.

    Context width is 1 + the longest context in the batch (sentinel at
    position 0); answerable gold spans shift by +1 accordingly.
    """
    idx = list(range(len(examples)))
    if shuffle:
        if rng is None:
            raise ValueError("shuffled batching requires an rng")
        idx = list(rng.permutation(len(examples)))
    for lo in range(0, len(idx), batch_size):
        chunk = [examples[i] for i in idx[lo:lo + batch_size]]
        yield _assemble(chunk, vocab)


def _assemble(chunk: Sequence[TokenizedExample], vocab: Vocabulary) -> Batch:
    bsz = len(chunk)
    n = 1 + max(len(ex.context_tokens) for ex in chunk)
    m = max(1, max(len(ex.question_tokens) for ex in chunk))
    ctx_ids = np.full((bsz, n), PAD_ID, dtype=np.int64)
    q_ids = np.full((bsz, m), PAD_ID, dtype=np.int64)
    ctx_chars = np.zeros((bsz, n, MAX_WORD_LEN), dtype=np.int64)
    q_chars = np.zeros((bsz, m, MAX_WORD_LEN), dtype=np.int64)
    gold_start = np.zeros(bsz, dtype=np.int64)
    gold_end = np.zeros(bsz, dtype=np.int64)
    for bi, ex in enumerate(chunk):
        ctx_ids[bi, 0] = NULL_ID
        for ti, tok in enumerate(ex.context_tokens):
            ctx_ids[bi, ti + 1] = vocab.id_of(tok)
        ctx_chars[bi, 1:1 + len(ex.context_tokens)] = ex.context_char_ids
        for ti, tok in enumerate(ex.question_tokens):
            q_ids[bi, ti] = vocab.id_of(tok)
        if len(ex.question_tokens):
            q_chars[bi, :len(ex.question_tokens)] = ex.question_char_ids
        if ex.gold_span is not None:
            gold_start[bi] = ex.gold_span[0] + 1
            gold_end[bi] = ex.gold_span[1] + 1
    return Batch(
        ctx_ids=ctx_ids, q_ids=q_ids, ctx_chars=ctx_chars, q_chars=q_chars,
        ctx_mask=ctx_ids != PAD_ID, q_mask=q_ids != PAD_ID,
        gold_start=gold_start, gold_end=gold_end, examples=list(chunk))
