import numpy as np
import pytest

from bidaflab import tensor as T
from bidaflab.encoder import (EncoderVariant, ModelEncoder,
                              VariantParseError, densenet_width_plan,
                              parse_variant, run_stack)
from bidaflab.gradcheck import gradient_check
from bidaflab.nn import Module
from bidaflab.rng import RngStream
from bidaflab.tensor import Tensor


class _Wrap(Module):
    def __init__(self, **mods):
        super().__init__()
        for name, m in mods.items():
            setattr(self, name, m)


class TestParseVariant:
    @pytest.mark.parametrize("text,expected", [
        ("baseline", EncoderVariant("baseline")),
        ("bypass:3", EncoderVariant("bypass", depth=3)),
        ("highway:8", EncoderVariant("highway", depth=8)),
        ("densenet:2+2+1", EncoderVariant("densenet", plan=(2, 2, 1))),
        ("densenet:2+2", EncoderVariant("densenet", plan=(2, 2))),
        ("densenet:3+3", EncoderVariant("densenet", plan=(3, 3))),
        ("Highway:4", EncoderVariant("highway", depth=4)),
        ("BYPASS:1", EncoderVariant("bypass", depth=1)),
    ])
    def test_grammar(self, text, expected):
        assert parse_variant(text) == expected

    @pytest.mark.parametrize("bad", ["", "bypass", "bypass:0", "highway:-1",
                                     "densenet:", "densenet:2+", "resnet:3"])
    def test_rejects(self, bad):
        with pytest.raises(VariantParseError):
            parse_variant(bad)

    def test_label_roundtrip(self):
        for text in ["baseline", "bypass:3", "highway:8", "densenet:2+2+1"]:
            assert parse_variant(text).label() == text


def _encoder(variant_text, hidden=4, seed=0, dropout=0.0):
    wrap = _Wrap(enc=ModelEncoder(parse_variant(variant_text), hidden, dropout))
    wrap.initialize(seed, np.float64)
    return wrap


def _g_and_mask(seed, b=2, n=5, hidden=4):
    rng = RngStream(seed, 40)
    g = Tensor(rng.normal(0, 1, (b, n, 8 * hidden)))
    mask = np.ones((b, n), dtype=bool)
    mask[0, n - 1] = False
    return g, mask


class TestShapesAndDispatch:
    @pytest.mark.parametrize("variant", ["baseline", "bypass:2", "highway:2",
                                         "densenet:2+2"])
    def test_output_width_2h_for_all_variants(self, variant):
        wrap = _encoder(variant)
        g, mask = _g_and_mask(1)
        m, _ = run_stack(wrap.enc, g, mask)
        assert m.shape == (2, 5, 8)

    def test_baseline_returns_entry_output(self):
        wrap = _encoder("baseline")
        g, mask = _g_and_mask(2)
        m, outputs = wrap.enc(g, mask)
        np.testing.assert_array_equal(m.data, wrap.enc.encode_entry(g, mask).data)
        assert len(outputs) == 1

    @pytest.mark.parametrize("depth", [1, 3])
    def test_layer_outputs_length_matches_depth(self, depth):
        wrap = _encoder(f"bypass:{depth}")
        g, mask = _g_and_mask(3)
        _, outputs = wrap.enc(g, mask)
        assert len(outputs) == depth


class TestResidualIdentity:
    @pytest.mark.parametrize("depth", [1, 3])
    def test_zero_output_projection_is_bitwise_identity(self, depth):
        wrap = _encoder(f"bypass:{depth}", seed=4)
        for block in wrap.enc.blocks:
            block.out_proj.w.data[...] = 0
            block.out_proj.b.data[...] = 0
        g, mask = _g_and_mask(5)
        m0 = wrap.enc.encode_entry(g, mask)
        m, outputs = wrap.enc(g, mask)
        assert np.array_equal(m.data, m0.data)
        for layer_out in outputs:
            assert np.array_equal(layer_out.data, m0.data)

    def test_single_layer_matches_hand_wired_composition(self):
        wrap = _encoder("bypass:1", seed=6)
        g, mask = _g_and_mask(7)
        m0 = wrap.enc.encode_entry(g, mask)
        block_out = wrap.enc.blocks[0](m0, mask)
        m, _ = wrap.enc(g, mask)
        np.testing.assert_allclose(m.data, block_out.data + m0.data, atol=1e-14)


class TestHighwayStack:
    def test_closed_gates_identity_depth8(self):
        wrap = _encoder("highway:8", seed=8)
        for gate in wrap.enc.gates:
            gate.b.data[...] = -20.0
            gate.w.data[...] = 0
        g, mask = _g_and_mask(9)
        m0 = wrap.enc.encode_entry(g, mask)
        m, _ = wrap.enc(g, mask)
        assert np.abs(m.data - m0.data).max() < 1e-5

    def test_open_gates_pure_transform(self):
        wrap = _encoder("highway:1", seed=10)
        wrap.enc.gates[0].b.data[...] = 20.0
        wrap.enc.gates[0].w.data[...] = 0
        g, mask = _g_and_mask(11)
        m0 = wrap.enc.encode_entry(g, mask)
        h = wrap.enc.blocks[0](m0, mask)
        m, _ = wrap.enc(g, mask)
        assert np.abs(m.data - h.data).max() < 1e-5

    def test_matches_scalar_oracle_two_layers(self):
        wrap = _encoder("highway:2", seed=12, hidden=3)
        g, mask = _g_and_mask(13, hidden=3)
        m, _ = wrap.enc(g, mask)

        def sigmoid(v):
            return 1.0 / (1.0 + np.exp(-v))

        x = wrap.enc.encode_entry(g, mask).data
        for block, gate in zip(wrap.enc.blocks, wrap.enc.gates):
            h = block(Tensor(x), mask).data
            gt = sigmoid(x @ gate.w.data + gate.b.data)
            x = gt * h + (1 - gt) * x
        np.testing.assert_allclose(m.data, x, atol=1e-8)

    def test_closed_gates_pass_gradient_unattenuated(self):
        wrap = _encoder("highway:8", seed=14)
        for gate in wrap.enc.gates:
            gate.b.data[...] = -20.0
            gate.w.data[...] = 0
        g, mask = _g_and_mask(15)
        m0 = wrap.enc.encode_entry(g, mask)
        m0_leaf = Tensor(m0.data, requires_grad=True)
        m, _ = wrap.enc.encode_highway(m0_leaf, mask, None)
        r = RngStream(16).normal(0, 1, m.shape)
        T.tsum(T.mul(m, Tensor(r))).backward()
        assert np.abs(m0_leaf.grad - r).max() < 1e-6


class TestDenseNet:
    def test_width_plan_hand_arithmetic(self):
        # plan [2,2], growth 2h, compression 0.5, h=4 -> 2h=8
        plan = densenet_width_plan((2, 2), in_width=8, growth=8,
                                   compression=0.5, final_width=8)
        assert plan["layer_inputs"] == [[8, 16], [12, 20]]
        assert plan["block_outputs"] == [24, 28]
        assert plan["transitions"] == [(24, 12), (28, 8)]

    def test_module_parameter_shapes_follow_plan(self):
        wrap = _encoder("densenet:2+2")
        stack = wrap.enc.dense
        assert stack.bottlenecks[0].w.shape == (8, 8)
        assert stack.bottlenecks[1].w.shape == (16, 8)
        assert stack.bottlenecks[2].w.shape == (12, 8)
        assert stack.bottlenecks[3].w.shape == (20, 8)
        assert stack.transitions[0].w.shape == (24, 12)
        assert stack.transitions[1].w.shape == (28, 8)

    def test_smallest_plan_single_layer(self):
        wrap = _encoder("densenet:1")
        g, mask = _g_and_mask(17)
        m, _ = wrap.enc(g, mask)
        assert m.shape == (2, 5, 8)

    def test_infeasible_compression_raises(self):
        with pytest.raises(ValueError, match="compression"):
            densenet_width_plan((2, 2), 8, 8, 0.0, 8)


class TestDepthIsConfigOnly:
    @pytest.mark.parametrize("depth", [1, 5, 10])
    def test_any_depth_from_config_string(self, depth):
        wrap = _encoder(f"highway:{depth}", hidden=3, seed=22)
        g, mask = _g_and_mask(23, n=4, hidden=3)
        m, outputs = wrap.enc(g, mask)
        assert m.shape == (2, 4, 6)
        assert len(outputs) == depth


class TestParameterCounts:
    def _stack_params(self, variant):
        wrap = _encoder(variant)
        return sum(p.size for n, p in wrap.named_parameters()
                   if not n.startswith("enc.entry"))

    @pytest.mark.parametrize("kind", ["bypass", "highway"])
    def test_linear_growth_in_depth(self, kind):
        sizes = [self._stack_params(f"{kind}:{d}") for d in (1, 2, 3, 4)]
        deltas = {sizes[i + 1] - sizes[i] for i in range(3)}
        assert len(deltas) == 1
        # closed form: per block bilstm(2h->h) + out_proj(2h->2h), plus the
        # per-layer gate for highway
        h = 4
        two_h = 2 * h
        bilstm = 2 * (two_h * 4 * h + h * 4 * h + 4 * h)
        block = bilstm + (two_h * two_h + two_h)
        gate = two_h * two_h + two_h if kind == "highway" else 0
        assert deltas == {block + gate}

    def test_shared_submodules_initialize_identically_across_variants(self):
        base = _encoder("baseline", seed=3)
        deep = _encoder("bypass:3", seed=3)
        np.testing.assert_array_equal(base.enc.entry.fwd.w.data,
                                      deep.enc.entry.fwd.w.data)


class TestGradients:
    @pytest.mark.parametrize("variant", ["bypass:1", "bypass:3", "highway:1",
                                         "highway:3", "densenet:2+2"])
    def test_gradient_check(self, variant):
        wrap = _encoder(variant, hidden=3, seed=18)
        g, mask = _g_and_mask(19, n=4, hidden=3)
        r = Tensor(RngStream(20).normal(0, 1, (2, 4, 6)))

        def f():
            m, _ = wrap.enc(g, mask)
            return T.tsum(T.mul(m, r))
        err = gradient_check(f, wrap.parameters(), samples_per_param=3,
                             rng=RngStream(21))
        assert err < 1e-4
