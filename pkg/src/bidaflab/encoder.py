"""Deep model-encoder stacks above the attention output.

Variants share one contract: [B x N x 8h] in, [B x N x 2h] out, plus the
list of per-layer outputs for output-side ensembling.  Depth and wiring are
config-only; swapping variants changes nothing else in the pipeline.

Variant grammar (case-insensitive):
    baseline | bypass:<L> | highway:<L> | densenet:<s1>+<s2>[+...]
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import BiLstm, Linear, Module, ModuleList, Parameter, apply_dropout
from .rng import RngStream
from .tensor import Tensor

DEFAULT_COMPRESSION = 0.5


class VariantParseError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderVariant:
    kind: str                      # baseline | bypass | highway | densenet
    depth: int = 0                 # bypass/highway stack depth
    plan: tuple[int, ...] = ()     # densenet block sizes
    growth: int | None = None      # densenet growth channels; None = 2h
    compression: float = DEFAULT_COMPRESSION

    def label(self) -> str:
        if self.kind == "baseline":
            return "baseline"
        if self.kind == "densenet":
            return "densenet:" + "+".join(str(s) for s in self.plan)
        return f"{self.kind}:{self.depth}"


def parse_variant(text: str) -> EncoderVariant:
    s = text.strip().lower()
    if s == "baseline":
        return EncoderVariant("baseline")
    m = re.fullmatch(r"(bypass|highway):(\d+)", s)
    if m:
        depth = int(m.group(2))
        if depth < 1:
            raise VariantParseError(f"{text!r}: depth must be >= 1")
        return EncoderVariant(m.group(1), depth=depth)
    m = re.fullmatch(r"densenet:(\d+(?:\+\d+)*)", s)
    if m:
        plan = tuple(int(p) for p in m.group(1).split("+"))
        if any(p < 1 for p in plan):
            raise VariantParseError(f"{text!r}: block sizes must be >= 1")
        return EncoderVariant("densenet", plan=plan)
    raise VariantParseError(
        f"cannot parse encoder variant {text!r}; expected baseline, "
        f"bypass:<L>, highway:<L> or densenet:<s1>+<s2>[+...]")


class EncoderBlock(Module):
    """One recurrent transform: (project to 2h if needed) -> BiLSTM -> linear.

    The closing projection is what a residual wrapper zero-initializes to
    start as an identity map.
    """

    def __init__(self, d_in: int, hidden: int, d_out: int | None = None):
        super().__init__()
        two_h = 2 * hidden
        self.in_proj = Linear(d_in, two_h) if d_in != two_h else None
        self.rnn = BiLstm(two_h, hidden)
        self.out_proj = Linear(two_h, d_out if d_out is not None else two_h)

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        if self.in_proj is not None:
            x = self.in_proj(x)
        return self.out_proj(self.rnn(x, mask))

    __call__ = forward


def densenet_width_plan(plan: tuple[int, ...], in_width: int, growth: int,
                        compression: float, final_width: int) -> dict:
    """Pure width arithmetic for a densenet stack.

    Returns {"layer_inputs": [[...]], "block_outputs": [...],
    "transitions": [(w_in, w_out)]}; the last transition lands on
    final_width.
    """
    layer_inputs: list[list[int]] = []
    block_outputs: list[int] = []
    transitions: list[tuple[int, int]] = []
    width = in_width
    for bi, size in enumerate(plan):
        inputs = []
        acc = width
        for _ in range(size):
            inputs.append(acc)
            acc += growth
        layer_inputs.append(inputs)
        block_outputs.append(acc)
        if bi == len(plan) - 1:
            out = final_width
        else:
            out = math.ceil(compression * acc)
            if out < 1 or compression <= 0:
                raise ValueError(
                    f"densenet: compression {compression} collapses width {acc}")
        transitions.append((acc, out))
        width = out
    return {"layer_inputs": layer_inputs, "block_outputs": block_outputs,
            "transitions": transitions}


class DenseStack(Module):
    """Dense blocks of bottleneck+recurrent layers with transitions between."""

    def __init__(self, plan: tuple[int, ...], hidden: int, growth: int | None,
                 compression: float):
        super().__init__()
        two_h = 2 * hidden
        g = growth if growth is not None else two_h
        self.plan = plan
        widths = densenet_width_plan(plan, two_h, g, compression, two_h)
        self.widths = widths
        bottlenecks, layers, transitions = [], [], []
        for bi, size in enumerate(plan):
            for li in range(size):
                d_in = widths["layer_inputs"][bi][li]
                bottlenecks.append(Linear(d_in, two_h))
                layers.append(EncoderBlock(two_h, hidden, d_out=g))
            transitions.append(Linear(*widths["transitions"][bi]))
        self.bottlenecks = ModuleList(bottlenecks)
        self.layers = ModuleList(layers)
        self.transitions = ModuleList(transitions)

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        li = 0
        for bi, size in enumerate(self.plan):
            feats = [x]
            for _ in range(size):
                inp = T.concat(feats, axis=-1) if len(feats) > 1 else feats[0]
                compressed = self.bottlenecks[li](inp)
                feats.append(self.layers[li](compressed, mask))
                li += 1
            x = self.transitions[bi](T.concat(feats, axis=-1))
        return x

    __call__ = forward


class ModelEncoder(Module):
    """Entry recurrent pass producing M0, then the configured deep stack."""

    def __init__(self, variant: EncoderVariant, hidden: int, dropout: float = 0.0):
        super().__init__()
        self.variant = variant
        self.dropout = dropout
        two_h = 2 * hidden
        self.entry = BiLstm(8 * hidden, hidden)
        if variant.kind in ("bypass", "highway"):
            self.blocks = ModuleList(
                [EncoderBlock(two_h, hidden) for _ in range(variant.depth)])
        if variant.kind == "highway":
            gates = []
            for _ in range(variant.depth):
                g = Module()
                g.w = Parameter((two_h, two_h), ("xavier",))
                # bias toward carry so a deep stack starts near-identity
                g.b = Parameter((two_h,), ("constant", -2.0))
                gates.append(g)
            self.gates = ModuleList(gates)
        if variant.kind == "densenet":
            self.dense = DenseStack(variant.plan, hidden, variant.growth,
                                    variant.compression)

    def encode_entry(self, g: Tensor, mask: np.ndarray) -> Tensor:
        return self.entry(g, mask)

    def _block_input(self, x: Tensor, rng: RngStream | None) -> Tensor:
        return apply_dropout(x, self.dropout, rng, self.training)

    def encode_bypass(self, m0: Tensor, mask: np.ndarray,
                      rng: RngStream | None) -> tuple[Tensor, list[Tensor]]:
        outputs = []
        x = m0
        for block in self.blocks:
            x = T.add(block(self._block_input(x, rng), mask), x)
            outputs.append(x)
        return x, outputs

    def encode_highway(self, m0: Tensor, mask: np.ndarray,
                       rng: RngStream | None) -> tuple[Tensor, list[Tensor]]:
        outputs = []
        x = m0
        one = Tensor(np.asarray(1.0, dtype=m0.dtype))
        for block, gate in zip(self.blocks, self.gates):
            g = T.sigmoid(T.add(T.matmul(x, gate.w), gate.b))
            h = block(self._block_input(x, rng), mask)
            x = T.add(T.mul(g, h), T.mul(T.sub(one, g), x))
            outputs.append(x)
        return x, outputs

    def encode_densenet(self, m0: Tensor, mask: np.ndarray,
                        rng: RngStream | None) -> Tensor:
        return self.dense(self._block_input(m0, rng), mask)

    def forward(self, g: Tensor, mask: np.ndarray,
                rng: RngStream | None = None) -> tuple[Tensor, list[Tensor]]:
        m0 = self.encode_entry(g, mask)
        kind = self.variant.kind
        if kind == "baseline":
            return m0, [m0]
        if kind == "bypass":
            return self.encode_bypass(m0, mask, rng)
        if kind == "highway":
            return self.encode_highway(m0, mask, rng)
        final = self.encode_densenet(m0, mask, rng)
        return final, [final]

    __call__ = forward


def run_stack(encoder: ModelEncoder, g: Tensor, mask: np.ndarray,
              rng: RngStream | None = None) -> tuple[Tensor, list[Tensor]]:
    return encoder.forward(g, mask, rng)
