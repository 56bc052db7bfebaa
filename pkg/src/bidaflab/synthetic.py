"""Synthetic extractive-QA corpora for desk-scale experiments.

Tasks:
  copy           question names a key token; the answer is the token right
                 after it in the context.
  char-sensitive the question carries a cue token whose two-letter suffix
                 picks out one marker token in the context; markers and cues
                 are never in the word-vector file, so only character-level
                 features can tell them apart.
  multi-hop      the context is a shuffled sequence of key/value pairs; the
                 question names a key whose value is itself a key, and the
                 answer is the value at the end of that two-link chain.
  char-multi-hop multi-hop whose first link starts from a char-suffix cue,
                 so solving it needs both character features and chaining.

Every task makes 20% of examples unanswerable by leaving the questioned key
out of the context.  Corpora are emitted as ordinary SquadExample lists and
serialize to the standard JSON corpus format.
"""

from __future__ import annotations

import numpy as np

from .data import SquadExample, tokenize
from .rng import RngStream, VECTOR_STREAM

TASKS = ("copy", "char-sensitive", "multi-hop", "char-multi-hop")

UNANSWERABLE_FRACTION = 0.2

# Shared suffix inventory for the char tasks: fixed across corpora so the
# suffix patterns are learnable, while marker bases stay random.  Three-char
# suffixes on two-char bases keep most convolution windows base-independent,
# which is what lets suffix matching generalize to unseen bases.
SUFFIXES = ("bal", "cem", "dit", "fon", "gur", "hyx", "jaq", "kov")

_QUESTION_WORDS = {
    "copy": ["follows"],
    "char-sensitive": ["match"],
    "multi-hop": ["chain"],
    "char-multi-hop": ["chain"],
}

_LETTERS = "abcdefghijklmnopqrstuvwxyz"


class SyntheticSpecError(ValueError):
    pass


def _filler_vocab(size: int) -> list[str]:
    return [f"w{i:03d}" for i in range(size)]


def _marker(rng: RngStream, suffix: str) -> str:
    base = "".join(_LETTERS[i] for i in rng.integers(0, 26, size=2))
    return f"{base}{suffix}"


def _assemble_example(eid: str, ctx_tokens: list[str], q_tokens: list[str],
                      answer_pos: int | None) -> SquadExample:
    context = " ".join(ctx_tokens)
    question = " ".join(q_tokens)
    if answer_pos is None:
        return SquadExample(eid, context, question, [], True)
    char_start = sum(len(t) + 1 for t in ctx_tokens[:answer_pos])
    text = ctx_tokens[answer_pos]
    assert context[char_start:char_start + len(text)] == text
    return SquadExample(eid, context, question, [(text, char_start)], False)


def _gen_copy(rng: RngStream, eid: str, fillers: list[str],
              context_len: int) -> SquadExample:
    answerable = rng.random() >= UNANSWERABLE_FRACTION
    key = fillers[int(rng.integers(0, len(fillers)))]
    others = [t for t in fillers if t != key]
    ctx = [others[int(i)] for i in rng.integers(0, len(others), size=context_len)]
    if answerable:
        pos = int(rng.integers(0, context_len - 1))
        ctx[pos] = key
        answer_pos = pos + 1
    else:
        answer_pos = None
    return _assemble_example(eid, ctx, _QUESTION_WORDS["copy"] + [key], answer_pos)


def _gen_char(rng: RngStream, eid: str, fillers: list[str],
              context_len: int) -> SquadExample:
    n_markers = 4
    if context_len < 2 * n_markers:
        raise SyntheticSpecError(
            f"char-sensitive: context_len {context_len} too short for "
            f"{n_markers} markers")
    answerable = rng.random() >= UNANSWERABLE_FRACTION
    suffixes = list(rng.choice(SUFFIXES, size=n_markers, replace=False))
    ctx = [fillers[int(i)] for i in rng.integers(0, len(fillers), size=context_len)]
    positions = sorted(rng.choice(context_len, size=n_markers, replace=False))
    markers = [_marker(rng, suf) for suf in suffixes]
    for pos, marker in zip(positions, markers):
        ctx[int(pos)] = marker
    if answerable:
        target = int(rng.integers(0, n_markers))
        answer_pos = int(positions[target])
        if rng.random() < 0.5:
            # cue repeats the marker verbatim; suffix still carries the match
            cue = markers[target]
        else:
            cue = _marker(rng, suffixes[target])
    else:
        unused = [s for s in SUFFIXES if s not in suffixes]
        cue = _marker(rng, unused[int(rng.integers(0, len(unused)))])
        answer_pos = None
    return _assemble_example(eid, ctx, _QUESTION_WORDS["char-sensitive"] + [cue],
                             answer_pos)


def _gen_hop(rng: RngStream, eid: str, fillers: list[str], context_len: int,
             char_flavored: bool) -> SquadExample:
    n_pairs = max(3, context_len // 3)
    if context_len < 2 * n_pairs:
        raise SyntheticSpecError(
            f"multi-hop: context_len {context_len} cannot hold {n_pairs} pairs")
    answerable = rng.random() >= UNANSWERABLE_FRACTION
    if char_flavored:
        suffixes = list(rng.choice(SUFFIXES, size=2, replace=False))
        cue = _marker(rng, suffixes[0])
        # the chain entry key shares the cue's suffix only when answerable
        first_key = _marker(rng, suffixes[0] if answerable else suffixes[1])
    else:
        cue = fillers[int(rng.integers(0, len(fillers)))]
        if answerable:
            first_key = cue
        else:
            others = [t for t in fillers if t != cue]
            first_key = others[int(rng.integers(0, len(others)))]

    # Distinct tokens for the chain and distractor pairs.  Keys never repeat,
    # distractor values never collide with keys or the chain, so the 2-link
    # chain entry -> mid -> answer is unambiguous within the pair region.
    pool = [t for t in fillers if t not in (first_key, cue)]
    if len(pool) < 2 * n_pairs + 1:
        raise SyntheticSpecError(
            f"multi-hop: vocab_size too small for {n_pairs} pairs")
    picks = [pool[int(i)] for i in
             rng.choice(len(pool), size=2 * n_pairs, replace=False)]
    mid, answer = picks[0], picks[1]
    distractor_keys = picks[2:n_pairs]
    distractor_values = picks[n_pairs:2 * n_pairs - 2]
    chain = [(first_key, mid), (mid, answer)]
    pairs = list(zip(distractor_keys, distractor_values))
    rng.shuffle(pairs)
    if rng.random() < 0.5:
        # local chain: both links adjacent in the pair sequence
        at = int(rng.integers(0, len(pairs) + 1))
        pairs[at:at] = chain
    else:
        # far chain: the links sit at least one pair apart
        first_at = int(rng.integers(0, len(pairs) + 1))
        pairs.insert(first_at, chain[0])
        spots = [i for i in range(len(pairs) + 1)
                 if i not in (first_at, first_at + 1)]
        second_at = spots[int(rng.integers(0, len(spots)))]
        pairs.insert(second_at, chain[1])

    ctx: list[str] = []
    for k, v in pairs:
        ctx.extend([k, v])
    filler_pool = [t for t in pool if t not in set(picks)]
    for _ in range(context_len - len(ctx)):
        ctx.append(filler_pool[int(rng.integers(0, len(filler_pool)))])

    answer_pos = None
    if answerable:
        answer_pos = next(i for i in range(1, 2 * len(pairs), 2)
                          if ctx[i - 1] == mid and ctx[i] == answer)
    task = "char-multi-hop" if char_flavored else "multi-hop"
    return _assemble_example(eid, ctx, _QUESTION_WORDS[task] + [cue], answer_pos)


def generate_synthetic_corpus(spec: dict, seed: int) -> list[SquadExample]:
    """Generate a corpus from {task, n_examples, vocab_size, context_len}."""
    task = spec["task"]
    if task not in TASKS:
        raise SyntheticSpecError(f"unknown task {task!r}; choose from {TASKS}")
    n = int(spec["n_examples"])
    vocab_size = int(spec["vocab_size"])
    context_len = int(spec["context_len"])
    if vocab_size < 10:
        raise SyntheticSpecError(f"vocab_size must be >= 10, got {vocab_size}")
    if context_len < 5:
        raise SyntheticSpecError(f"context_len must be >= 5, got {context_len}")
    fillers = _filler_vocab(vocab_size)
    rng = RngStream(seed)
    out = []
    for i in range(n):
        eid = f"{task}-{seed}-{i:05d}"
        if task == "copy":
            out.append(_gen_copy(rng, eid, fillers, context_len))
        elif task == "char-sensitive":
            out.append(_gen_char(rng, eid, fillers, context_len))
        elif task == "multi-hop":
            out.append(_gen_hop(rng, eid, fillers, context_len, False))
        else:
            out.append(_gen_hop(rng, eid, fillers, context_len, True))
    return out


def is_marker_token(token: str) -> bool:
    """Tokens carrying a char-task suffix; these never get word vectors."""
    return len(token) == 5 and token.isalpha() and token[2:] in SUFFIXES


def vector_file_tokens(examples) -> list[str]:
    """All corpus token types except char-task markers, deterministic order."""
    seen: dict[str, None] = {}
    for ex in examples:
        for tok, _ in tokenize(ex.context) + tokenize(ex.question):
            if not is_marker_token(tok):
                seen.setdefault(tok, None)
    return sorted(seen)


def synthetic_vector_rows(tokens, dim: int, seed: int) -> dict[str, np.ndarray]:
    """Deterministic pseudo word vectors for a synthetic vocabulary."""
    rng = RngStream(seed, VECTOR_STREAM)
    return {t: rng.uniform(-0.5, 0.5, size=dim) for t in sorted(tokens)}


def write_vector_file(rows: dict[str, np.ndarray], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for token in sorted(rows):
            vec = " ".join(f"{v:.6f}" for v in rows[token])
            fh.write(f"{token} {vec}\n")
