"""Central finite-difference gradient verification.

The checker perturbs inputs one element at a time with a symmetric step and
compares the difference quotient against the analytic gradient produced by
``backward()``. All checks run in double precision.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numerical_grad(f: Callable[[], Tensor], x: Tensor, eps: float = 1e-5,
                   indices: Optional[Sequence[tuple]] = None) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``x``.

    ``f`` must re-read ``x.data`` on every call. When ``indices`` is given,
    only those flat positions are probed (the rest stay zero); this keeps
    whole-model checks tractable.
    """
    if x.dtype != np.float64:
        raise ValueError("numerical_grad requires float64 inputs")
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    probe = range(flat.size) if indices is None else indices
    with no_grad():
        for i in probe:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor).

    The floor turns the criterion into an absolute tolerance for near-zero
    gradients, where the finite-difference quotient is dominated by rounding
    noise.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradient(f: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
                   max_probes: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error between analytic and finite-difference gradients.

    Runs one backward pass from ``f()`` and then probes every element of
    every input (or ``max_probes`` random elements per input when set).
    """
    for t in inputs:
        t.zero_grad()
    out = f()
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, a in zip(inputs, analytic):
        if max_probes is not None and t.size > max_probes:
            if rng is None:
                rng = np.random.default_rng(0)
            idx = rng.choice(t.size, size=max_probes, replace=False)
            idx = [int(i) for i in idx]
        else:
            idx = None
        n = numerical_grad(f, t, eps=eps, indices=idx)
        if idx is None:
            err = relative_error(a, n)
        else:
            sel = np.asarray(idx)
            err = relative_error(a.reshape(-1)[sel], n.reshape(-1)[sel])
        worst = max(worst, err)
    return worst
