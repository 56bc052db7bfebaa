"""Parameter management and the sequence primitives built on the tape.

Modules form a tree; parameters get hierarchical dotted names from their
position in it.  Initialization draws each parameter's values from an
RngStream keyed by (seed, hash(name)), so two models that share a submodule
path initialize that submodule identically regardless of what else differs.
"""

from __future__ import annotations

from typing import Iterator, Optional, Sequence

import numpy as np

from . import tensor as T
from .rng import RngStream, stream_id_for_name
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable tensor plus the recipe for (re)initializing it.

    init specs: ("zeros",), ("constant", c), ("uniform", a, b), ("xavier",),
    ("lstm_bias",) -- zeros with the forget-gate slice set to +1.
    """

    __slots__ = ("init_spec",)

    def __init__(self, shape, init=("xavier",), dtype=np.float64):
        super().__init__(np.zeros(shape, dtype=dtype), requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.init_spec = tuple(init)

    def materialize(self, rng: RngStream) -> None:
        kind = self.init_spec[0]
        if kind == "zeros":
            self.data[...] = 0
        elif kind == "constant":
            self.data[...] = self.init_spec[1]
        elif kind == "uniform":
            a, b = self.init_spec[1], self.init_spec[2]
            self.data[...] = rng.uniform(a, b, self.shape).astype(self.dtype)
        elif kind == "xavier":
            fan_in = int(np.prod(self.shape[:-1])) if self.ndim > 1 else self.shape[0]
            fan_out = self.shape[-1]
            limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
            self.data[...] = rng.uniform(-limit, limit, self.shape).astype(self.dtype)
        elif kind == "lstm_bias":
            # gate layout i|f|o|g; bias the forget gate open at the start
            self.data[...] = 0
            nh = self.shape[0] // 4
            self.data[nh:2 * nh] = 1.0
        else:
            raise ValueError(f"unknown init spec {self.init_spec}")

    def set_dtype(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.grad = np.zeros_like(self.data)


class Module:
    """Base class with automatic child/parameter registration."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield (f"{prefix}.{name}" if prefix else name), p
        for name, m in self._modules.items():
            sub = f"{prefix}.{name}" if prefix else name
            yield from m.named_parameters(sub)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def initialize(self, seed: int, dtype=np.float64) -> "Module":
        """Fill every parameter from its own (seed, name)-keyed stream."""
        names = [n for n, _ in self.named_parameters()]
        if len(names) != len(set(names)):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate parameter names: {dupes}")
        for name, p in self.named_parameters():
            p.set_dtype(dtype)
            p.materialize(RngStream(seed, stream_id_for_name(name)))
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        if missing or extra:
            raise ValueError(
                f"parameter name mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = arrays[name]
            if tuple(arr.shape) != p.shape:
                raise ValueError(
                    f"shape mismatch for {name}: checkpoint {arr.shape} vs model {p.shape}")
            p.data[...] = arr.astype(p.dtype)


class ModuleList(Module):
    def __init__(self, mods: Sequence[Module] = ()):
        super().__init__()
        self._list: list[Module] = []
        for m in mods:
            self.append(m)

    def append(self, m: Module) -> None:
        self._modules[str(len(self._list))] = m
        self._list.append(m)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


class Linear(Module):
    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.w = Parameter((d_in, d_out), ("xavier",))
        self.b = Parameter((d_out,), ("zeros",))

    def forward(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w), self.b)

    __call__ = forward


class LstmDirection(Module):
    """One direction of a gated recurrent pass, d_in -> h."""

    def __init__(self, d_in: int, hidden: int):
        super().__init__()
        self.hidden = hidden
        self.w = Parameter((d_in, 4 * hidden), ("xavier",))
        self.u = Parameter((hidden, 4 * hidden), ("xavier",))
        self.b = Parameter((4 * hidden,), ("lstm_bias",))

    def run(self, x: Tensor, mask: np.ndarray, reverse: bool) -> Tensor:
        """x[B x T x d], boolean mask[B x T] -> emissions [B x T x h].

        State carries through masked steps unchanged; emitted vectors at
        masked positions are exactly zero.
        """
        bsz, steps, _ = x.shape
        dtype = x.dtype
        h = Tensor(np.zeros((bsz, self.hidden), dtype=dtype))
        c = Tensor(np.zeros((bsz, self.hidden), dtype=dtype))
        keep_all = mask.astype(dtype)[:, :, None]
        full = mask.all(axis=0)  # columns where no row is padded
        order = range(steps - 1, -1, -1) if reverse else range(steps)
        emits: dict[int, Tensor] = {}
        for t in order:
            keep = None if full[t] else keep_all[:, t]
            xt = T.select_index(x, 1, t)
            hc = T.lstm_cell(xt, h, c, self.w, self.u, self.b, keep)
            h = T.narrow(hc, 1, 0, self.hidden)
            c = T.narrow(hc, 1, self.hidden, self.hidden)
            emits[t] = h if keep is None else T.mul(h, Tensor(keep))
        return T.stack_time([emits[t] for t in range(steps)])


class BiLstm(Module):
    """Bi-directional recurrent encoder, d_in -> 2h."""

    def __init__(self, d_in: int, hidden: int):
        super().__init__()
        self.fwd = LstmDirection(d_in, hidden)
        self.bwd = LstmDirection(d_in, hidden)

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        if x.shape[1] < 1:
            raise ValueError("bilstm: zero-length sequence")
        return T.concat([self.fwd.run(x, mask, reverse=False),
                         self.bwd.run(x, mask, reverse=True)], axis=-1)

    __call__ = forward


def bilstm_encode(x: Tensor, length: int, encoder: BiLstm) -> Tensor:
    """Single-sequence form: x[T x d] -> [T x 2h], zeros beyond `length`."""
    steps = x.shape[0]
    if steps < 1 or length < 1:
        raise ValueError("bilstm_encode: zero-length sequence")
    mask = np.zeros((1, steps), dtype=bool)
    mask[0, :length] = True
    out = encoder.forward(T.reshape(x, (1, steps, x.shape[1])), mask)
    return T.reshape(out, (steps, out.shape[2]))


def conv_maxpool_batch(x: Tensor, filters: Tensor, bias: Tensor, width: int) -> Tensor:
    """1-D convolution over time + ReLU + max-over-time.

    x[B x T x d_c], filters[w x d_c x f] -> [B x f].  Sequences shorter than
    the kernel are zero-padded up to it.
    """
    bsz, steps, d_c = x.shape
    f = filters.shape[2]
    if steps < width:
        pad = Tensor(np.zeros((bsz, width - steps, d_c), dtype=x.dtype))
        x = T.concat([x, pad], axis=1)
        steps = width
    flat = T.reshape(filters, (width * d_c, f))
    windows = []
    for p in range(steps - width + 1):
        win = T.narrow(x, 1, p, width)
        windows.append(T.reshape(win, (bsz, 1, width * d_c)))
    stacked = T.concat(windows, axis=1) if len(windows) > 1 else windows[0]
    scores = T.relu(T.add(T.matmul(stacked, flat), bias))
    return T.tmax(scores, axis=1)


def conv1d_maxpool(x: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    """Single-sequence form: x[T x d_c], filters[w x d_c x f] -> [f]."""
    if x.shape[1] != filters.shape[1]:
        raise T.ShapeMismatchError(
            f"conv1d_maxpool: channel mismatch {x.shape} vs {filters.shape}")
    steps, d_c = x.shape
    out = conv_maxpool_batch(T.reshape(x, (1, steps, d_c)), filters, bias,
                             filters.shape[0])
    return T.reshape(out, (out.shape[1],))


def apply_dropout(x: Tensor, rate: float, rng: Optional[RngStream],
                  training: bool) -> Tensor:
    if not training or rate <= 0.0 or rng is None:
        return x
    return T.dropout(x, rate, rng)
