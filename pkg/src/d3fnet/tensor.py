"""Minimal dense tensor with reverse-mode automatic differentiation.

Tensors wrap a row-major numpy float buffer. Every differentiable op records
its inputs and a backward closure on the output tensor; ``Tensor.backward()``
replays the recorded graph in reverse topological order and accumulates
gradients into ``.grad`` buffers. Gradients accumulate across calls; callers
zero them explicitly (see ``zero_grad``).

Convolutions are direct tap-loop summations (one GEMM per kernel tap), not
im2col or FFT, so every kernel stays easy to verify against a naive oracle.
"""

from __future__ import annotations

import os
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "ConfigError",
    "NumericError",
    "no_grad",
    "set_nan_check",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "sigmoid",
    "log",
    "clip",
    "tsum",
    "tmean",
    "matmul",
    "swap_last2",
    "reshape",
    "softmax_lastdim",
    "split_lastdim",
    "concat",
    "concat_channels",
    "conv2d",
    "conv_transpose2d",
    "batch_norm2d",
    "max_pool2d",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """An operation was configured with invalid parameters."""


class NumericError(ArithmeticError):
    """A NaN or Inf was produced (raised only when NaN checking is on)."""


_nan_check = os.environ.get("D3FNET_NAN_CHECK", "0") not in ("0", "", "false")
_grad_enabled = True


def set_nan_check(enabled: bool) -> None:
    """Toggle per-op NaN/Inf detection. Off by default; cheap but not free."""
    global _nan_check
    _nan_check = enabled


class no_grad:
    """Context manager that disables graph recording (for eval/inference)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """Dense N-d float array with an optional gradient buffer.

    ``data`` is always a C-contiguous float32 or float64 numpy array.
    Tensors produced by ops are immutable by convention; mutate only leaf
    parameter data between steps (as an optimizer does).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward_fn = None
        self._op = "leaf"

    # -- introspection ----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self._op})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    # -- gradient machinery ------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode differentiation from a scalar root.

        Populates ``.grad`` on every tensor in the recorded graph that
        ``requires_grad``. Gradients accumulate into existing buffers; call
        ``zero_grad`` on the leaves before re-running if accumulation is not
        wanted.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar root, got shape {self.shape}")
        order = _toposort(self)
        self._accumulate_grad(np.ones_like(self.data))
        for node in order:
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
                _check_finite_grads(node)

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _toposort(root: Tensor) -> list:
    """Reverse topological order of the graph below ``root``.

    Iterative DFS; every node appears exactly once, and each node is
    emitted after everything that consumes it.
    """
    order: list = []
    seen = set()
    stack: list = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _nan_check and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by op '{op}'")


def _check_finite_grads(node: Tensor) -> None:
    if _nan_check:
        for p in node._parents:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient produced by backward of '{node._op}'")


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn) -> Tensor:
    """Wrap an op result, recording the graph edge when gradients are live."""
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(data)
    out.grad = None
    out._op = op
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    else:
        out._parents = ()
        out._backward_fn = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: mixed dtypes {a.dtype} vs {b.dtype}")


# -- elementwise ops --------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "add")

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate_grad(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "sub")

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate_grad(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    _check_same_dtype(a, b, "mul")

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = a.dtype.type(s)

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(g * s)

    return _make(a.data * s, (a,), "scale", bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(g * mask)

    return _make(np.where(mask, a.data, a.dtype.type(0)), (a,), "relu", bwd)


def sigmoid(a: Tensor) -> Tensor:
    # stable split form: exp only ever sees non-positive arguments
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(g * out * (1.0 - out))

    return _make(out, (a,), "sigmoid", bwd)


def log(a: Tensor) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(g / a.data)

    return _make(np.log(a.data), (a,), "log", bwd)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the input is inside."""
    mask = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(g * mask)

    return _make(np.clip(a.data, lo, hi), (a,), "clip", bwd)


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(np.full_like(a.data, g.reshape(())))

    return _make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), "sum", bwd)


def tmean(a: Tensor) -> Tensor:
    return scale(tsum(a), 1.0 / a.size)


# -- shape ops ---------------------------------------------------------------

def reshape(a: Tensor, shape: tuple) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), "reshape", bwd)


def swap_last2(a: Tensor) -> Tensor:
    """Transpose the last two axes (e.g. for K^T in attention)."""
    if a.data.ndim < 2:
        raise ShapeError(f"swap_last2 needs ndim >= 2, got shape {a.shape}")

    def bwd(g):
        if a.requires_grad:
            a._accumulate_grad(np.swapaxes(g, -1, -2))

    return _make(np.swapaxes(a.data, -1, -2), (a,), "swap_last2", bwd)


def split_lastdim(a: Tensor, parts: int = 2) -> tuple:
    """Split the last axis into ``parts`` equal slices.

    Concatenating the pieces back along the last axis reproduces the input
    bit-for-bit.
    """
    n = a.shape[-1]
    if n % parts != 0:
        raise ShapeError(f"split_lastdim: last extent {n} not divisible into {parts} parts")
    w = n // parts
    outs = []
    for i in range(parts):
        lo = i * w

        def bwd(g, lo=lo):
            if a.requires_grad:
                if a.grad is None:
                    a.grad = np.zeros_like(a.data)
                a.grad[..., lo:lo + w] += g

        outs.append(_make(a.data[..., lo:lo + w], (a,), "split_lastdim", bwd))
    return tuple(outs)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat of zero tensors")
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate_grad(g[tuple(idx)])

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, "concat", bwd)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate NCHW feature maps along the channel axis."""
    return concat(tensors, axis=1)


# -- matmul & softmax ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product on the last two axes, with numpy batch broadcasting."""
    _check_same_dtype(a, b, "matmul")
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")

    def bwd(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate_grad(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate_grad(_unbroadcast(gb, b.shape))

    return _make(np.matmul(a.data, b.data), (a, b), "matmul", bwd)


def softmax_lastdim(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=-1, keepdims=True)
            a._accumulate_grad(y * (g - dot))

    return _make(y, (a,), "softmax_lastdim", bwd)


# -- spatial ops ---------------------------------------------------------------

def _conv_out_extent(n: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _conv2d_raw(x, k, stride, padding, dilation):
    b, ci, h, w = x.shape
    co, _, kh, kw = k.shape
    oh = _conv_out_extent(h, kh, stride, padding, dilation)
    ow = _conv_out_extent(w, kw, stride, padding, dilation)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    acc = np.zeros((b, oh, ow, co), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i * dilation: i * dilation + (oh - 1) * stride + 1: stride,
                    j * dilation: j * dilation + (ow - 1) * stride + 1: stride]
            acc += np.tensordot(xs, k[:, :, i, j], axes=([1], [1]))
    return np.ascontiguousarray(acc.transpose(0, 3, 1, 2))


def _conv2d_input_grad(gy, k, x_shape, stride, padding, dilation):
    b, ci, h, w = x_shape
    co, _, kh, kw = k.shape
    oh, ow = gy.shape[2], gy.shape[3]
    gxp = np.zeros((b, ci, h + 2 * padding, w + 2 * padding), dtype=gy.dtype)
    gy_t = gy.transpose(0, 2, 3, 1)
    for i in range(kh):
        for j in range(kw):
            g = np.tensordot(gy_t, k[:, :, i, j], axes=([3], [0]))  # (b,oh,ow,ci)
            gxp[:, :, i * dilation: i * dilation + (oh - 1) * stride + 1: stride,
                j * dilation: j * dilation + (ow - 1) * stride + 1: stride] += g.transpose(0, 3, 1, 2)
    if padding:
        return np.ascontiguousarray(gxp[:, :, padding:padding + h, padding:padding + w])
    return gxp


def _conv2d_weight_grad(gy, x, k_shape, stride, padding, dilation):
    co, ci, kh, kw = k_shape
    oh, ow = gy.shape[2], gy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    gk = np.zeros(k_shape, dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i * dilation: i * dilation + (oh - 1) * stride + 1: stride,
                    j * dilation: j * dilation + (ow - 1) * stride + 1: stride]
            gk[:, :, i, j] = np.tensordot(gy, xs, axes=([0, 2, 3], [0, 2, 3]))
    return gk


def conv2d(x: Tensor, k: Tensor, stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    """Dilated 2-d cross-correlation, NCHW input and (cout,cin,kh,kw) kernel.

    Direct tap-loop summation. With padding == dilation and stride 1, a 3x3
    kernel preserves spatial shape.
    """
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {k.shape}")
    if x.shape[1] != k.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {k.shape}")
    if dilation < 1 or stride < 1 or padding < 0:
        raise ConfigError(f"conv2d: bad stride/padding/dilation ({stride},{padding},{dilation})")
    _check_same_dtype(x, k, "conv2d")
    b, ci, h, w = x.shape
    co, _, kh, kw = k.shape
    oh = _conv_out_extent(h, kh, stride, padding, dilation)
    ow = _conv_out_extent(w, kw, stride, padding, dilation)
    if oh < 1 or ow < 1:
        raise ConfigError(
            f"conv2d output extent {oh}x{ow} for input {h}x{w}, kernel {kh}x{kw}, "
            f"stride={stride}, padding={padding}, dilation={dilation}")

    def bwd(g):
        if x.requires_grad:
            x._accumulate_grad(_conv2d_input_grad(g, k.data, x.shape, stride, padding, dilation))
        if k.requires_grad:
            k._accumulate_grad(_conv2d_weight_grad(g, x.data, k.shape, stride, padding, dilation))

    return _make(_conv2d_raw(x.data, k.data, stride, padding, dilation), (x, k), "conv2d", bwd)


def conv_transpose2d(x: Tensor, k: Tensor, stride: int, padding: Optional[int] = None) -> Tensor:
    """Transposed convolution (the adjoint of conv2d), NCHW input.

    Kernel layout is (cin, cout, kh, kw). Supported strides are 1 and 2.
    When ``padding`` is omitted it is derived from the kernel so that
    stride 1 preserves spatial size (odd kernel) and stride 2 exactly doubles
    it (even kernel). The gradient w.r.t. the input is the corresponding
    forward convolution.
    """
    if stride not in (1, 2):
        raise ConfigError(f"conv_transpose2d: unsupported stride {stride}")
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects 4-d input and kernel, got {x.shape} and {k.shape}")
    if x.shape[1] != k.shape[0]:
        raise ShapeError(f"conv_transpose2d channel mismatch: input {x.shape} vs kernel {k.shape}")
    _check_same_dtype(x, k, "conv_transpose2d")
    b, ci, h, w = x.shape
    _, co, kh, kw = k.shape
    if padding is None:
        if (kh - stride) % 2 != 0:
            raise ConfigError(
                f"conv_transpose2d: kernel size {kh} incompatible with stride {stride} "
                f"for automatic padding")
        padding = (kh - stride) // 2
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (w - 1) * stride - 2 * padding + kw
    if oh < 1 or ow < 1:
        raise ConfigError(f"conv_transpose2d: output extent {oh}x{ow} is not positive")

    def fwd(xd, kd):
        full_h = (h - 1) * stride + kh
        full_w = (w - 1) * stride + kw
        yp = np.zeros((b, co, full_h, full_w), dtype=xd.dtype)
        x_t = xd.transpose(0, 2, 3, 1)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(x_t, kd[:, :, i, j], axes=([3], [0]))  # (b,h,w,co)
                yp[:, :, i: i + (h - 1) * stride + 1: stride,
                   j: j + (w - 1) * stride + 1: stride] += contrib.transpose(0, 3, 1, 2)
        return np.ascontiguousarray(yp[:, :, padding:padding + oh, padding:padding + ow])

    def bwd(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else g
        if x.requires_grad:
            acc = np.zeros((b, h, w, ci), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gs = gp[:, :, i: i + (h - 1) * stride + 1: stride,
                            j: j + (w - 1) * stride + 1: stride]
                    acc += np.tensordot(gs, k.data[:, :, i, j], axes=([1], [1]))
            x._accumulate_grad(np.ascontiguousarray(acc.transpose(0, 3, 1, 2)))
        if k.requires_grad:
            gk = np.zeros(k.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gs = gp[:, :, i: i + (h - 1) * stride + 1: stride,
                            j: j + (w - 1) * stride + 1: stride]
                    gk[:, :, i, j] = np.tensordot(x.data, gs, axes=([0, 2, 3], [0, 2, 3]))
            k._accumulate_grad(gk)

    return _make(fwd(x.data, k.data), (x, k), "conv_transpose2d", bwd)


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool, eps: float = 1e-5, momentum: float = 0.1,
                 update_running: bool = True) -> Tensor:
    """Per-channel batch normalization over (batch, h, w).

    Training mode normalizes with the current batch statistics (population
    variance) and, when ``update_running`` is set, folds them into the running
    buffers as ``running = (1 - momentum) * running + momentum * batch``.
    Eval mode normalizes with the running buffers; before any training step
    those hold mean 0 / var 1, so eval output is just an affine map of the
    input (documented behavior, not an error).
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm2d expects NCHW input, got shape {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm2d: gamma/beta must have shape ({c},)")
    axes = (0, 2, 3)
    eps = x.dtype.type(eps)

    if training:
        m = x.data.mean(axis=axes)
        v = x.data.var(axis=axes)
        if update_running:
            running_mean *= (1.0 - momentum)
            running_mean += momentum * m.astype(running_mean.dtype)
            running_var *= (1.0 - momentum)
            running_var += momentum * v.astype(running_var.dtype)
    else:
        m = running_mean.astype(x.dtype)
        v = running_var.astype(x.dtype)

    inv_std = 1.0 / np.sqrt(v + eps)
    xhat = (x.data - m[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def bwd(g):
        if beta.requires_grad:
            beta._accumulate_grad(g.sum(axis=axes))
        if gamma.requires_grad:
            gamma._accumulate_grad((g * xhat).sum(axis=axes))
        if x.requires_grad:
            gs = g * gamma.data[None, :, None, None]
            if training:
                mean_gs = gs.mean(axis=axes)
                mean_gs_xhat = (gs * xhat).mean(axis=axes)
                gx = inv_std[None, :, None, None] * (
                    gs - mean_gs[None, :, None, None] - xhat * mean_gs_xhat[None, :, None, None])
            else:
                gx = gs * inv_std[None, :, None, None]
            x._accumulate_grad(gx)

    return _make(out, (x, gamma, beta), "batch_norm2d", bwd)


def max_pool2d(x: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping 2x2 max pooling (kernel == stride required)."""
    if kernel != stride:
        raise ConfigError("max_pool2d supports only kernel == stride")
    b, c, h, w = x.shape
    if h % kernel or w % kernel:
        raise ConfigError(f"max_pool2d: spatial extent {h}x{w} not divisible by {kernel}")
    oh, ow = h // kernel, w // kernel
    windows = x.data.reshape(b, c, oh, kernel, ow, kernel)
    windows = windows.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, kernel * kernel)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        if x.requires_grad:
            gw = np.zeros((b, c, oh, ow, kernel * kernel), dtype=g.dtype)
            np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
            gw = gw.reshape(b, c, oh, ow, kernel, kernel).transpose(0, 1, 2, 4, 3, 5)
            x._accumulate_grad(np.ascontiguousarray(gw.reshape(b, c, h, w)))

    return _make(np.ascontiguousarray(out), (x,), "max_pool2d", bwd)
