"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy float array plus an optional gradient buffer.  Ops
record a backward closure and their parent tensors; calling backward() on a
scalar walks the tape once in reverse topological order, accumulating
gradients additively across fan-out.

The tape is rebuilt on every forward pass (dynamic graph).  Training may run
in float32; gradient checking requires float64.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

_CHECK_FINITE = False
_GRAD_ENABLED = True


class NonFiniteError(ArithmeticError):
    """Raised when finite-value checking is enabled and an op emits NaN/Inf."""


class ShapeMismatchError(ValueError):
    pass


class MaskError(ValueError):
    """Raised by masked_softmax when a row has no unmasked entry."""


def set_check_finite(flag: bool) -> None:
    global _CHECK_FINITE
    _CHECK_FINITE = bool(flag)


def check_finite_enabled() -> bool:
    return _CHECK_FINITE


class no_grad:
    """Context manager disabling tape construction (fast inference)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64),
                 np.dtype(np.longdouble))


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """A dense n-dimensional value, optionally participating in gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._backward = None
        self._parents: tuple = ()
        self._op = "leaf"

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    # -- gradient machinery ---------------------------------------------------

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad[...] = 0

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Reverse-mode pass from this tensor through the recorded tape.

        Each reachable node is visited exactly once; fan-out gradients are
        accumulated additively before a node's own rule runs.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient "
                                 "requires a scalar tensor")
            grad = np.ones_like(self.data)
        self.accumulate_grad(np.asarray(grad, dtype=self.data.dtype))

        # Iterative post-order topo sort; recursion would overflow on long
        # recurrent chains.
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        for node in reversed(topo):
            if node._backward is not None:
                node._backward()


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    """Wrap an op result; records the tape edge only when gradients are live."""
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")
    requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = requires
    out.grad = None
    out._parents = tuple(parents) if requires else ()
    out._backward = backward if requires else None
    out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


# -- arithmetic ---------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    data = a.data + b.data
    out = _make(data, (a, b), "add", None)

    def _bw():
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(out.grad, b.shape))
    out._backward = _bw if out.requires_grad else None
    return out


def mul(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    data = a.data * b.data
    out = _make(data, (a, b), "mul", None)

    def _bw():
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(out.grad * a.data, b.shape))
    out._backward = _bw if out.requires_grad else None
    return out


def neg(a: Tensor) -> Tensor:
    out = _make(-a.data, (a,), "neg", None)

    def _bw():
        a.accumulate_grad(-out.grad)
    out._backward = _bw if out.requires_grad else None
    return out


def sub(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    return add(a, neg(b))


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)
    out = _make(a.data * s, (a,), "scale", None)

    def _bw():
        a.accumulate_grad(out.grad * s)
    out._backward = _bw if out.requires_grad else None
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.  Supports 2D@2D, 3D@3D (batched) and 3D@2D."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(
            f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeMismatchError(
            f"matmul: batch dims differ: {a.shape} vs {b.shape}")
    data = a.data @ b.data
    out = _make(data, (a, b), "matmul", None)

    def _bw():
        g = out.grad
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            if ga.ndim > a.ndim:
                ga = ga.sum(axis=tuple(range(ga.ndim - a.ndim)))
            a.accumulate_grad(ga)
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            if gb.ndim > b.ndim:
                gb = gb.sum(axis=tuple(range(gb.ndim - b.ndim)))
            b.accumulate_grad(gb)
    out._backward = _bw if out.requires_grad else None
    return out


def transpose_last2(a: Tensor) -> Tensor:
    out = _make(np.swapaxes(a.data, -1, -2), (a,), "transpose", None)

    def _bw():
        a.accumulate_grad(np.swapaxes(out.grad, -1, -2))
    out._backward = _bw if out.requires_grad else None
    return out


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = _make(a.data.reshape(shape), (a,), "reshape", None)

    def _bw():
        a.accumulate_grad(out.grad.reshape(a.shape))
    out._backward = _bw if out.requires_grad else None
    return out


# -- structural ops -----------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = _make(data, tensors, "concat", None)
    ax = axis if axis >= 0 else data.ndim + axis
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _bw():
        idx = [slice(None)] * data.ndim
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx[ax] = slice(start, stop)
                t.accumulate_grad(out.grad[tuple(idx)])
    out._backward = _bw if out.requires_grad else None
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    ax = axis if axis >= 0 else a.ndim + axis
    idx = [slice(None)] * a.ndim
    idx[ax] = slice(start, start + length)
    idx = tuple(idx)
    out = _make(a.data[idx], (a,), "narrow", None)

    def _bw():
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[idx] += out.grad
    out._backward = _bw if out.requires_grad else None
    return out


def select_index(a: Tensor, axis: int, i: int) -> Tensor:
    """Drop one axis by selecting index i along it."""
    ax = axis if axis >= 0 else a.ndim + axis
    idx = [slice(None)] * a.ndim
    idx[ax] = i
    idx = tuple(idx)
    out = _make(a.data[idx], (a,), "select", None)

    def _bw():
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[idx] += out.grad
    out._backward = _bw if out.requires_grad else None
    return out


def stack_time(tensors: Sequence[Tensor]) -> Tensor:
    """Stack [B x d] slices into [B x T x d] along a new time axis."""
    tensors = list(tensors)
    data = np.stack([t.data for t in tensors], axis=1)
    out = _make(data, tensors, "stack_time", None)

    def _bw():
        for t_idx, t in enumerate(tensors):
            if t.requires_grad:
                t.accumulate_grad(out.grad[:, t_idx])
    out._backward = _bw if out.requires_grad else None
    return out


# -- pointwise nonlinearities --------------------------------------------------

def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)
    out = _make(data, (a,), "relu", None)

    def _bw():
        a.accumulate_grad(out.grad * (a.data > 0))
    out._backward = _bw if out.requires_grad else None
    return out


def sigmoid(a: Tensor) -> Tensor:
    data = _sigmoid_np(a.data)
    out = _make(data, (a,), "sigmoid", None)

    def _bw():
        a.accumulate_grad(out.grad * data * (1 - data))
    out._backward = _bw if out.requires_grad else None
    return out


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # Split by sign to avoid overflow in exp.
    pos = x >= 0
    z = np.empty_like(x)
    z[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    z[~pos] = e / (1.0 + e)
    return z


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    out = _make(data, (a,), "tanh", None)

    def _bw():
        a.accumulate_grad(out.grad * (1 - data * data))
    out._backward = _bw if out.requires_grad else None
    return out


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)
    out = _make(data, (a,), "log", None)

    def _bw():
        a.accumulate_grad(out.grad / a.data)
    out._backward = _bw if out.requires_grad else None
    return out


# -- reductions ----------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    out = _make(np.asarray(data, dtype=a.data.dtype), (a,), "sum", None)

    def _bw():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate_grad(np.broadcast_to(g, a.shape).astype(a.data.dtype, copy=False))
    out._backward = _bw if out.requires_grad else None
    return out


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        n = a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tmax(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along an axis; gradient routes to the first maximal entry."""
    ax = axis if axis >= 0 else a.ndim + axis
    data = a.data.max(axis=ax, keepdims=keepdims)
    argmax = a.data.argmax(axis=ax)
    out = _make(data, (a,), "max", None)

    def _bw():
        g = out.grad if keepdims else np.expand_dims(out.grad, ax)
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, np.expand_dims(argmax, ax), g, axis=ax)
        a.accumulate_grad(buf)
    out._backward = _bw if out.requires_grad else None
    return out


# -- softmax -------------------------------------------------------------------

NEG_INF_SURROGATE = -1e30


def masked_softmax(logits: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over unmasked entries; masked entries come out exactly 0.

    mask is a boolean array broadcastable to logits.shape, true on positions
    that participate.  A row with no true entry raises MaskError.  Stabilized
    by subtracting the row max over unmasked entries.
    """
    mask_b = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not mask_b.any(axis=axis).all():
        raise MaskError("masked_softmax: row with all positions masked")
    x = np.where(mask_b, logits.data, -np.inf)
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x, where=mask_b, out=np.zeros_like(logits.data))
    denom = e.sum(axis=axis, keepdims=True)
    data = e / denom
    out = _make(data, (logits,), "masked_softmax", None)

    def _bw():
        g = out.grad
        dot = (g * data).sum(axis=axis, keepdims=True)
        logits.accumulate_grad((g - dot) * data)
    out._backward = _bw if out.requires_grad else None
    return out


# -- gather / lookup -----------------------------------------------------------

def lookup(matrix: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: matrix[V x d], integer ids [...] -> [... x d]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= matrix.shape[0]):
        raise IndexError(
            f"lookup: id out of range [0, {matrix.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}")
    data = matrix.data[ids]
    out = _make(data, (matrix,), "lookup", None)

    def _bw():
        if matrix.grad is None:
            matrix.grad = np.zeros_like(matrix.data)
        np.add.at(matrix.grad, ids.reshape(-1),
                  out.grad.reshape(-1, matrix.shape[1]))
    out._backward = _bw if out.requires_grad else None
    return out


def gather_index(a: Tensor, idx: np.ndarray) -> Tensor:
    """Per-row pick: a[B x N], idx[B] -> [B] with a[b, idx[b]]."""
    idx = np.asarray(idx)
    rows = np.arange(a.shape[0])
    data = a.data[rows, idx]
    out = _make(data, (a,), "gather_index", None)

    def _bw():
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, (rows, idx), out.grad)
    out._backward = _bw if out.requires_grad else None
    return out


# -- regularization --------------------------------------------------------------

def dropout(a: Tensor, rate: float, rng) -> Tensor:
    """Inverted dropout: scales kept activations by 1/(1-rate) at train time."""
    if rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype)
    keep /= a.data.dtype.type(1.0 - rate)
    out = _make(a.data * keep, (a,), "dropout", None)

    def _bw():
        a.accumulate_grad(out.grad * keep)
    out._backward = _bw if out.requires_grad else None
    return out


# -- fused recurrent cell --------------------------------------------------------

def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor,
              w: Tensor, u: Tensor, b: Tensor,
              keep: Optional[np.ndarray]) -> Tensor:
    """One gated recurrent step, fused for tape compactness.

    x[B x d], h_prev/c_prev[B x h], w[d x 4h], u[h x 4h], b[4h].  Gate layout
    along the 4h axis is input | forget | output | candidate.  keep[B x 1]
    (float 0/1) carries the previous state through padded steps unchanged;
    None means every row advances.  Returns [B x 2h] = new h ; new c.
    """
    nh = h_prev.shape[1]
    z = x.data @ w.data + h_prev.data @ u.data + b.data
    zi = _sigmoid_np(z[:, :nh])
    zf = _sigmoid_np(z[:, nh:2 * nh])
    zo = _sigmoid_np(z[:, 2 * nh:3 * nh])
    zg = np.tanh(z[:, 3 * nh:])
    c_new = zf * c_prev.data + zi * zg
    h_new = zo * np.tanh(c_new)
    if keep is None:
        data = np.concatenate([h_new, c_new], axis=1)
        carry = None
    else:
        carry = 1.0 - keep
        data = np.concatenate([keep * h_new + carry * h_prev.data,
                               keep * c_new + carry * c_prev.data], axis=1)
    out = _make(data, (x, h_prev, c_prev, w, u, b), "lstm_cell", None)

    def _bw():
        dh_out = out.grad[:, :nh]
        dc_out = out.grad[:, nh:]
        dh = dh_out if keep is None else dh_out * keep
        dc = dc_out if keep is None else dc_out * keep
        tc = np.tanh(c_new)
        dzo = dh * tc
        dc = dc + dh * zo * (1 - tc * tc)
        dzf = dc * c_prev.data
        dzi = dc * zg
        dzg = dc * zi
        dz = np.concatenate([dzi * zi * (1 - zi),
                             dzf * zf * (1 - zf),
                             dzo * zo * (1 - zo),
                             dzg * (1 - zg * zg)], axis=1)
        if x.requires_grad:
            x.accumulate_grad(dz @ w.data.T)
        if h_prev.requires_grad:
            g = dz @ u.data.T
            if carry is not None:
                g += dh_out * carry
            h_prev.accumulate_grad(g)
        if c_prev.requires_grad:
            g = dc * zf
            if carry is not None:
                g = g + dc_out * carry
            c_prev.accumulate_grad(g)
        if w.requires_grad:
            w.accumulate_grad(x.data.T @ dz)
        if u.requires_grad:
            u.accumulate_grad(h_prev.data.T @ dz)
        if b.requires_grad:
            b.accumulate_grad(dz.sum(axis=0))
    out._backward = _bw if out.requires_grad else None
    return out


# -- operator sugar ---------------------------------------------------------------

Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(self, other)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(self, other)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
Tensor.sum = tsum
Tensor.mean = tmean
Tensor.max = tmax
Tensor.reshape = reshape


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def constant(value, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(value, dtype=dtype))
