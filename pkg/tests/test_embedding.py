import numpy as np
import pytest

from bidaflab import tensor as T
from bidaflab.data import NULL_ID, OOV_ID, PAD_ID
from bidaflab.embedding import (CharEmbedding, EmbeddingConfig, EmbeddingLayer,
                                HighwayFuse, WordEmbedding, embed_words)
from bidaflab.gradcheck import gradient_check
from bidaflab.nn import Module
from bidaflab.rng import RngStream
from bidaflab.tensor import Tensor


class _Wrap(Module):
    def __init__(self, **mods):
        super().__init__()
        for name, m in mods.items():
            setattr(self, name, m)


def _toy_matrix():
    m = np.zeros((5, 2))
    m[3] = [1.0, 2.0]  # "cat"
    m[4] = [3.0, 4.0]
    return m


class TestWordEmbedding:
    def test_pad_row_is_zero(self):
        emb = _Wrap(w=WordEmbedding(_toy_matrix())).w
        out = embed_words(np.array([[PAD_ID]]), emb)
        np.testing.assert_array_equal(out.data, [[[0.0, 0.0]]])

    def test_fixture_row_readback(self):
        emb = _Wrap(w=WordEmbedding(_toy_matrix())).w
        out = embed_words(np.array([[3]]), emb)
        np.testing.assert_array_equal(out.data, [[[1.0, 2.0]]])

    def test_permutation_equivariant(self):
        emb = _Wrap(w=WordEmbedding(_toy_matrix())).w
        a = embed_words(np.array([[3, 4, 0]]), emb)
        b = embed_words(np.array([[0, 4, 3]]), emb)
        np.testing.assert_array_equal(a.data[0, ::-1], b.data[0])

    def test_out_of_range_raises(self):
        emb = _Wrap(w=WordEmbedding(_toy_matrix())).w
        with pytest.raises(IndexError):
            embed_words(np.array([[9]]), emb)

    def test_only_oov_and_null_rows_train(self):
        wrap = _Wrap(w=WordEmbedding(_toy_matrix()))
        wrap.initialize(0, np.float64)
        ids = np.array([[OOV_ID, NULL_ID, 3]])
        wrap.w.special.data[...] = [[0.5, 0.5], [7.0, 7.0]]
        out = wrap.w.forward(ids)
        np.testing.assert_array_equal(out.data[0, 0], [0.5, 0.5])
        np.testing.assert_array_equal(out.data[0, 1], [7.0, 7.0])
        np.testing.assert_array_equal(out.data[0, 2], [1.0, 2.0])
        T.tsum(out).backward()
        # frozen matrix accumulates nothing; trainable rows do
        assert wrap.w.matrix.grad is None
        np.testing.assert_array_equal(wrap.w.special.grad, np.ones((2, 2)))


class TestCharEmbedding:
    def test_all_pad_zero_filters_zero_vector(self):
        wrap = _Wrap(c=CharEmbedding(6, 4, 5, 3))
        for p in wrap.parameters():
            p.data[...] = 0
        out = wrap.c(np.zeros((2, 3, 16), dtype=np.int64))
        np.testing.assert_array_equal(out.data, np.zeros((2, 3, 5)))

    def test_identical_tokens_identical_embeddings(self):
        wrap = _Wrap(c=CharEmbedding(8, 4, 5, 3)).initialize(1, np.float64)
        ids = np.zeros((1, 2, 16), dtype=np.int64)
        ids[0, 0, :3] = [2, 5, 3]
        ids[0, 1, :3] = [2, 5, 3]
        out = wrap.c(ids)
        np.testing.assert_array_equal(out.data[0, 0], out.data[0, 1])

    def test_one_filter_manual_convolution(self):
        wrap = _Wrap(c=CharEmbedding(4, 2, 1, 2))
        wrap.c.emb.data[...] = [[0, 0], [1, 0], [0, 1], [1, 1]]
        wrap.c.filters.data[...] = np.ones((2, 2, 1))
        wrap.c.bias.data[...] = 0
        ids = np.zeros((1, 1, 16), dtype=np.int64)
        ids[0, 0, :3] = [1, 3, 2]
        # windows: [1,0]+[1,1]=3, [1,1]+[0,1]=3, then pairs with PADs
        out = wrap.c(ids)
        assert out.data[0, 0, 0] == 3.0


class TestHighwayFuse:
    def _fuser(self, dim=4, layers=2, seed=0):
        return _Wrap(f=HighwayFuse(dim, layers)).initialize(seed, np.float64)

    def test_saturated_closed_gate_is_identity(self):
        wrap = self._fuser()
        for layer in wrap.f.layers:
            layer.b_gate.data[...] = -20.0
        x = Tensor(RngStream(2).normal(0, 1, (2, 3, 4)))
        out = wrap.f(x)
        assert np.abs(out.data - x.data).max() < 1e-6

    def test_saturated_open_gate_is_pure_transform(self):
        wrap = self._fuser(layers=1)
        layer = wrap.f.layers[0]
        layer.b_gate.data[...] = 20.0
        x = Tensor(RngStream(3).normal(0, 1, (2, 3, 4)))
        out = wrap.f(x)
        expected = np.maximum(
            x.data @ layer.w_transform.data + layer.b_transform.data, 0.0)
        assert np.abs(out.data - expected).max() < 1e-6

    def test_matches_scalar_oracle(self):
        wrap = self._fuser(dim=3, layers=2, seed=5)
        x_np = RngStream(6).normal(0, 1, (2, 2, 3))
        out = wrap.f(Tensor(x_np))

        def sigmoid(v):
            return 1.0 / (1.0 + np.exp(-v))

        expected = x_np.copy()
        for layer in wrap.f.layers:
            nxt = np.zeros_like(expected)
            for b in range(2):
                for t in range(2):
                    xv = expected[b, t]
                    g = sigmoid(layer.w_gate.data.T @ xv + layer.b_gate.data)
                    tr = np.maximum(layer.w_transform.data.T @ xv
                                    + layer.b_transform.data, 0.0)
                    nxt[b, t] = g * tr + (1 - g) * xv
            expected = nxt
        np.testing.assert_allclose(out.data, expected, atol=1e-10)


class TestEmbeddingLayer:
    def _layer(self, use_char):
        cfg = EmbeddingConfig(word_dim=6, use_char=use_char, char_dim=4,
                              char_filters=5, char_kernel=3, hidden=4,
                              dropout=0.0)
        matrix = RngStream(7).normal(0, 1, (9, 6))
        matrix[:3] = 0
        return _Wrap(e=EmbeddingLayer(cfg, matrix, n_chars=7)).initialize(
            8, np.float64)

    @pytest.mark.parametrize("use_char", [False, True])
    def test_output_width_is_2h(self, use_char):
        wrap = self._layer(use_char)
        ids = np.array([[2, 3, 4, 0]])
        chars = np.zeros((1, 4, 16), dtype=np.int64)
        mask = ids != 0
        out = wrap.e(ids, chars, mask)
        assert out.shape == (1, 4, 8)

    def test_char_toggle_changes_only_fused_width(self):
        with_char = self._layer(True)
        without = self._layer(False)
        assert with_char.e.cfg.fused_dim == 6 + 5
        assert without.e.cfg.fused_dim == 6
        # contextual output contract identical
        assert with_char.e.contextual.fwd.hidden == without.e.contextual.fwd.hidden

    def test_masked_positions_zero(self):
        wrap = self._layer(False)
        ids = np.array([[3, 4, 0, 0]])
        chars = np.zeros((1, 4, 16), dtype=np.int64)
        out = wrap.e(ids, chars, ids != 0)
        assert np.all(out.data[0, 2:] == 0)

    def test_batched_equals_single_rows(self):
        wrap = self._layer(True)
        wrap.eval()
        rng = RngStream(9)
        ids = np.array([[3, 4, 5], [6, 7, 0]])
        chars = rng.integers(1, 7, (2, 3, 16))
        chars[ids == 0] = 0
        mask = ids != 0
        batched = wrap.e(ids, chars, mask)
        for row in range(2):
            single = wrap.e(ids[row:row + 1], chars[row:row + 1],
                            mask[row:row + 1])
            np.testing.assert_allclose(batched.data[row], single.data[0],
                                       atol=1e-12)

    @pytest.mark.parametrize("use_char", [False, True])
    def test_gradient_check(self, use_char):
        wrap = self._layer(use_char)
        wrap.eval()
        ids = np.array([[3, 4, 5], [6, 7, 0]])
        chars = RngStream(10).integers(1, 7, (2, 3, 16))
        mask = ids != 0
        r = Tensor(RngStream(11).normal(0, 1, (2, 3, 8)))

        def f():
            return T.tsum(T.mul(wrap.e(ids, chars, mask), r))
        err = gradient_check(f, wrap.parameters(), samples_per_param=4,
                             rng=RngStream(12))
        assert err < 1e-4
