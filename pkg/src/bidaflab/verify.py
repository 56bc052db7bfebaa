"""Finite-difference verification families for the gradcheck command.

Each family builds a small float64 instance of one op (or one composed
layer) and compares its backward pass against central differences.  The
full_model family drives a complete forward/loss on a 2-example batch.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .attention import AttentionFlow
from .data import build_char_vocab, build_vocab_tokens, make_batches, \
    prepare_examples, vectors_to_vocabulary
from .embedding import CharEmbedding, HighwayFuse
from .encoder import EncoderVariant, ModelEncoder
from .gradcheck import gradient_check
from .model import ModelConfig, QAModel
from .nn import BiLstm, Module, Parameter
from .output import OutputLayer, span_loss
from .rng import RngStream
from .synthetic import generate_synthetic_corpus
from .tensor import Tensor


def _rand(rng: RngStream, shape) -> np.ndarray:
    return rng.normal(0.0, 1.0, shape)


def _holder(**params) -> Module:
    m = Module()
    for name, p in params.items():
        setattr(m, name, p)
    return m


def _param(rng: RngStream, shape) -> Parameter:
    p = Parameter(shape, ("zeros",), dtype=np.float64)
    p.data[...] = _rand(rng, shape)
    return p


def _generic_point(module: Module, seed: int) -> None:
    """Jitter parameters off their init values.

    Zero-initialized biases put ReLU inputs exactly on the kink for padded
    positions, where two-sided differences and the subgradient legitimately
    disagree; verification must run at a generic point instead.
    """
    rng = RngStream(seed, 77)
    for _, p in module.named_parameters():
        p.data += rng.uniform(-0.25, 0.25, p.shape)


def check_matmul(seed: int, h: float) -> float:
    rng = RngStream(seed, 11)
    a = _param(rng, (3, 4))
    b = _param(rng, (4, 2))
    c3 = _param(rng, (2, 3, 4))
    r1 = Tensor(_rand(rng, (3, 2)))
    r2 = Tensor(_rand(rng, (2, 3, 2)))

    def f():
        out1 = T.matmul(a, b)
        out2 = T.matmul(c3, b)
        return T.add(T.tsum(T.mul(out1, r1)), T.tsum(T.mul(out2, r2)))
    return gradient_check(f, [a, b, c3], h=h)


def check_elementwise(seed: int, h: float) -> float:
    rng = RngStream(seed, 12)
    a = _param(rng, (3, 4))
    b = _param(rng, (4,))
    r = Tensor(_rand(rng, (3, 4)))

    def f():
        out = T.add(T.mul(a, b), T.relu(a))
        out = T.add(out, T.sigmoid(a))
        out = T.add(out, T.tanh(T.mul(a, 0.5)))
        return T.tsum(T.mul(out, r))
    return gradient_check(f, [a, b], h=h)


def check_reductions(seed: int, h: float) -> float:
    rng = RngStream(seed, 13)
    a = _param(rng, (3, 5))
    r = Tensor(_rand(rng, (3,)))

    def f():
        out = T.add(T.tmax(a, axis=1), T.tmean(a, axis=1))
        return T.add(T.tsum(T.mul(out, r)), T.tsum(a))
    return gradient_check(f, [a], h=h)


def check_masked_softmax(seed: int, h: float) -> float:
    rng = RngStream(seed, 14)
    a = _param(rng, (3, 6))
    mask = np.ones((3, 6), dtype=bool)
    mask[0, 3:] = False
    mask[2, :2] = False
    r = Tensor(_rand(rng, (3, 6)))

    def f():
        return T.tsum(T.mul(T.masked_softmax(a, mask), r))
    return gradient_check(f, [a], h=h)


def check_gather(seed: int, h: float) -> float:
    rng = RngStream(seed, 15)
    table = _param(rng, (7, 4))
    ids = np.array([[0, 3, 3], [6, 1, 0]])
    scores = _param(rng, (2, 5))
    idx = np.array([1, 4])
    r = Tensor(_rand(rng, (2, 3, 4)))

    def f():
        picked = T.lookup(table, ids)
        per_row = T.gather_index(scores, idx)
        return T.add(T.tsum(T.mul(picked, r)), T.tsum(per_row))
    return gradient_check(f, [table, scores], h=h)


def check_structural(seed: int, h: float) -> float:
    rng = RngStream(seed, 16)
    a = _param(rng, (2, 3, 4))
    b = _param(rng, (2, 3, 2))
    r = Tensor(_rand(rng, (2, 3, 3)))

    def f():
        cat = T.concat([a, b], axis=-1)
        cut = T.narrow(cat, 2, 1, 3)
        swapped = T.transpose_last2(cut)
        row = T.select_index(a, 1, 0)
        stacked = T.stack_time([row, row])
        return T.add(T.tsum(T.mul(swapped, r)),
                     T.tsum(T.reshape(stacked, (2 * 2 * 4,))))
    return gradient_check(f, [a, b], h=h)


def check_dropout(seed: int, h: float) -> float:
    rng = RngStream(seed, 17)
    a = _param(rng, (4, 5))
    r = Tensor(_rand(rng, (4, 5)))

    def f():
        # identical mask on every call so finite differences stay valid
        mask_rng = RngStream(seed, 18)
        return T.tsum(T.mul(T.dropout(a, 0.4, mask_rng), r))
    return gradient_check(f, [a], h=h)


def check_lstm_cell(seed: int, h: float) -> float:
    rng = RngStream(seed, 19)
    nh = 3
    x = _param(rng, (2, 4))
    hp = _param(rng, (2, nh))
    cp = _param(rng, (2, nh))
    w = _param(rng, (4, 4 * nh))
    u = _param(rng, (nh, 4 * nh))
    b = _param(rng, (4 * nh,))
    keep = np.array([[1.0], [0.0]])
    r = Tensor(_rand(rng, (2, 2 * nh)))

    def f():
        return T.tsum(T.mul(T.lstm_cell(x, hp, cp, w, u, b, keep), r))
    return gradient_check(f, [x, hp, cp, w, u, b], h=h)


def check_bilstm(seed: int, h: float) -> float:
    rng = RngStream(seed, 20)
    holder = _holder()
    holder.rnn = BiLstm(3, 4)
    holder.initialize(seed, np.float64)
    _generic_point(holder, seed)
    x = Tensor(_rand(rng, (2, 5, 3)))
    mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=bool)
    r = Tensor(_rand(rng, (2, 5, 8)))

    def f():
        return T.tsum(T.mul(holder.rnn(x, mask), r))
    return gradient_check(f, holder.parameters(), h=h)


def check_conv_maxpool(seed: int, h: float) -> float:
    rng = RngStream(seed, 21)
    holder = _holder()
    holder.char = CharEmbedding(n_chars=9, char_dim=4, n_filters=5, kernel=3)
    holder.initialize(seed, np.float64)
    _generic_point(holder, seed)
    ids = RngStream(seed, 22).integers(0, 9, (2, 3, 8))
    r = Tensor(_rand(rng, (2, 3, 5)))

    def f():
        return T.tsum(T.mul(holder.char(ids), r))
    return gradient_check(f, holder.parameters(), h=h)


def check_highway_fuse(seed: int, h: float) -> float:
    rng = RngStream(seed, 23)
    holder = _holder()
    holder.fuse = HighwayFuse(5, layers=2)
    holder.initialize(seed, np.float64)
    _generic_point(holder, seed)
    x = Tensor(_rand(rng, (2, 3, 5)))
    r = Tensor(_rand(rng, (2, 3, 5)))

    def f():
        return T.tsum(T.mul(holder.fuse(x), r))
    return gradient_check(f, holder.parameters(), h=h)


def check_attention(seed: int, h: float) -> float:
    rng = RngStream(seed, 24)
    holder = _holder()
    holder.att = AttentionFlow(6)
    holder.initialize(seed, np.float64)
    _generic_point(holder, seed)
    c = _param(rng, (2, 5, 6))
    q = _param(rng, (2, 4, 6))
    ctx_mask = np.array([[1, 1, 1, 1, 0], [1, 1, 1, 1, 1]], dtype=bool)
    q_mask = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], dtype=bool)
    r = Tensor(_rand(rng, (2, 5, 24)))

    def f():
        return T.tsum(T.mul(holder.att(c, q, ctx_mask, q_mask), r))
    return gradient_check(f, holder.parameters() + [c, q], h=h,
                          samples_per_param=12, rng=RngStream(seed, 25))


def _encoder_err(variant: EncoderVariant, seed: int, h: float) -> float:
    rng = RngStream(seed, 26)
    hidden = 3
    holder = _holder()
    holder.enc = ModelEncoder(variant, hidden, dropout=0.0)
    holder.initialize(seed, np.float64)
    _generic_point(holder, seed)
    g = Tensor(_rand(rng, (2, 4, 8 * hidden)))
    mask = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], dtype=bool)
    r = Tensor(_rand(rng, (2, 4, 2 * hidden)))

    def f():
        m, _ = holder.enc(g, mask)
        return T.tsum(T.mul(m, r))
    return gradient_check(f, holder.parameters(), h=h,
                          samples_per_param=6, rng=RngStream(seed, 27))


def check_encoder_bypass(seed: int, h: float) -> float:
    return _encoder_err(EncoderVariant("bypass", depth=2), seed, h)


def check_encoder_highway(seed: int, h: float) -> float:
    return _encoder_err(EncoderVariant("highway", depth=2), seed, h)


def check_encoder_densenet(seed: int, h: float) -> float:
    return _encoder_err(EncoderVariant("densenet", plan=(2,)), seed, h)


def check_output_layer(seed: int, h: float) -> float:
    rng = RngStream(seed, 28)
    hidden = 3
    holder = _holder()
    holder.out = OutputLayer(hidden, ensemble_k=2)
    holder.initialize(seed, np.float64)
    _generic_point(holder, seed)
    g = Tensor(_rand(rng, (2, 5, 8 * hidden)))
    m1 = _param(rng, (2, 5, 2 * hidden))
    m2 = _param(rng, (2, 5, 2 * hidden))
    mask = np.array([[1, 1, 1, 1, 0], [1, 1, 1, 1, 1]], dtype=bool)
    gold_s = np.array([1, 2])
    gold_e = np.array([2, 4])

    def f():
        p_start, p_end = holder.out(g, m2, [m1, m2], mask)
        return span_loss(p_start, p_end, gold_s, gold_e)
    return gradient_check(f, holder.parameters() + [m1, m2], h=h,
                          samples_per_param=8, rng=RngStream(seed, 29))


def tiny_batch(seed: int):
    """A 2-example batch over a tiny synthetic corpus (N <= 6)."""
    examples = generate_synthetic_corpus(
        {"task": "copy", "n_examples": 8, "vocab_size": 12,
         "context_len": 5}, seed)
    char_vocab = build_char_vocab(examples)
    prepared, _ = prepare_examples(examples, char_vocab)
    tokens = build_vocab_tokens(examples)
    vec_rng = RngStream(seed, 30)
    rows = {t: vec_rng.uniform(-0.5, 0.5, 8) for t in sorted(tokens)}
    vocab = vectors_to_vocabulary(tokens, rows, 8)
    batch = next(make_batches(prepared[:2], 2, vocab))
    return batch, vocab, char_vocab


def check_full_model(seed: int, h: float) -> float:
    """Composed-model check in extended precision.

    Deep in the composition some true gradients sit near the 1e-8 relative
    floor, where float64 evaluation noise alone would swamp the comparison;
    extended precision keeps the probe honest for every sampled coordinate.
    """
    batch, vocab, char_vocab = tiny_batch(seed)
    cfg = ModelConfig(variant="highway:2", use_char=True, word_dim=8,
                      char_dim=4, char_filters=6, char_kernel=3, hidden=8,
                      dropout=0.0, ensemble_k=2)
    model = QAModel(cfg, vocab.matrix, len(char_vocab))
    model.initialize(seed, np.longdouble)
    _generic_point(model, seed)
    model.eval()

    def f():
        return model.loss(batch, rng=None)
    return gradient_check(f, model.parameters(), h=h,
                          samples_per_param=4, rng=RngStream(seed, 31))


FAMILIES = {
    "matmul": check_matmul,
    "elementwise": check_elementwise,
    "reductions": check_reductions,
    "masked_softmax": check_masked_softmax,
    "gather_lookup": check_gather,
    "structural": check_structural,
    "dropout": check_dropout,
    "lstm_cell": check_lstm_cell,
    "bilstm": check_bilstm,
    "conv_maxpool": check_conv_maxpool,
    "highway_fuse": check_highway_fuse,
    "attention": check_attention,
    "encoder_bypass": check_encoder_bypass,
    "encoder_highway": check_encoder_highway,
    "encoder_densenet": check_encoder_densenet,
    "output_layer": check_output_layer,
    "full_model": check_full_model,
}


def run_all_families(seed: int, h: float = 1e-5) -> dict[str, float]:
    return {name: fn(seed, h) for name, fn in FAMILIES.items()}
