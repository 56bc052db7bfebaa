"""Finite-difference verification of the reverse-mode pass.

gradient_check() compares analytic gradients against central differences for
a sampled set of parameter coordinates and returns the worst relative error.
Callables under test must be deterministic and run in float64.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .nn import Parameter
from .rng import RngStream
from .tensor import Tensor


def gradient_check(f: Callable[[], Tensor], params: Sequence[Parameter],
                   h: float = 1e-5, samples_per_param: int = 0,
                   rng: RngStream | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    f re-runs the forward pass and returns a scalar loss Tensor.  When
    samples_per_param is 0 every coordinate is checked; otherwise that many
    coordinates are sampled per parameter (rng required).
    """
    for p in params:
        if p.dtype not in (np.dtype(np.float64), np.dtype(np.longdouble)):
            raise ValueError("gradient_check requires >= 64-bit parameters")
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise ArithmeticError("gradient_check: non-finite loss")
    loss.backward()
    analytic = [np.array(p.grad, copy=True) for p in params]

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        if samples_per_param and samples_per_param < flat.size:
            if rng is None:
                raise ValueError("sampling requires an rng")
            coords = rng.choice(flat.size, size=samples_per_param, replace=False)
        else:
            coords = range(flat.size)
        for i in coords:
            i = int(i)
            orig = flat[i]
            flat[i] = orig + h
            up = f().data.reshape(())  # native dtype; difference before any cast
            flat[i] = orig - h
            down = f().data.reshape(())
            flat[i] = orig
            numeric = float((up - down) / (2.0 * h))
            err = abs(float(gflat[i]) - numeric) / max(
                abs(float(gflat[i])), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
