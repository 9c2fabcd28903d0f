"""Differentiable operations.

Every function takes and returns :class:`Tensor` nodes. Matrix operations
accept stacked (batched) operands along leading axes; ``*_rows`` and
``concat_cols`` act on the last axis.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _unbroadcast


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data - b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._make(ad * bd, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor._make(a.data * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return Tensor._make(y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return Tensor._make(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return Tensor._make(y, (a,), lambda g: (g * y,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._make(x * x, (a,), lambda g: (2.0 * g * x,))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return Tensor._make(y, (a,), lambda g: (g * 0.5 / y,))


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return Tensor._make(out, (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    """Permute axes; by default swap the last two."""
    if axes is None:
        if a.ndim < 2:
            raise ShapeError("transpose needs at least 2 dimensions")
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inv = np.argsort(axes)
    return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def index(a: Tensor, idx) -> Tensor:
    """Basic or advanced indexing (``slice``)."""
    shape = a.shape
    out = a.data[idx]

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(np.array(out), (a,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
                t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return Tensor._make(np.concatenate([t.data for t in tensors], axis=ax), tensors,
                        lambda g: tuple(np.split(g, cuts, axis=ax)))


def concat_cols(tensors) -> Tensor:
    return concat(tensors, axis=-1)


# ---------------------------------------------------------------------------
# linear algebra and attention primitives
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._make(np.matmul(ad, bd), (a, b), backward)


def softmax_rows(x: Tensor, scale: float = 1.0) -> Tensor:
    """Row-wise softmax of ``x / scale`` (last axis), max-shifted."""
    if not scale > 0:
        raise ValueError("softmax scale must be positive")
    z = x.data / scale
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return ((g - (g * y).sum(axis=-1, keepdims=True)) * y / scale,)

    return Tensor._make(y, (x,), backward)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def conv1d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Valid cross-correlation.

    ``x`` is ``(c_in, L)`` or ``(N, c_in, L)``; ``kernels`` is
    ``(c_out, c_in, k)``; output length is ``(L - k) // stride + 1``.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    wd = kernels.data
    if xd.ndim != 3 or wd.ndim != 3:
        raise ShapeError(f"conv1d expects (N, c_in, L) and (c_out, c_in, k), got {x.shape}, {kernels.shape}")
    n, c_in, length = xd.shape
    c_out, kc_in, k = wd.shape
    if kc_in != c_in:
        raise ShapeError(f"conv1d channel mismatch: input {c_in}, kernels {kc_in}")
    if length < k:
        raise ShapeError(f"conv1d input length {length} shorter than kernel {k}")
    l_out = (length - k) // stride + 1
    win = sliding_window_view(xd, k, axis=2)[:, :, ::stride][:, :, :l_out]  # (n, c_in, l_out, k)
    out = np.einsum("nclk,ock->nol", win, wd, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None]

    def backward(g):
        if squeeze:
            g = g[None]
        gw = np.einsum("nol,nclk->ock", g, win, optimize=True)
        gwin = np.einsum("nol,ock->nclk", g, wd, optimize=True)
        gx = np.zeros_like(xd)
        span = stride * (l_out - 1) + 1
        for j in range(k):
            gx[:, :, j:j + span:stride] += gwin[:, :, :, j]
        if squeeze:
            gx = gx[0]
        grads = (gx, gw)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 2)),)
        return grads

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return Tensor._make(out[0] if squeeze else out, parents, backward)


def max_pool1d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping max pooling over the last axis; ties go to the first index."""
    if window < 1:
        raise ValueError("window must be >= 1")
    shape = x.shape
    l_out = shape[-1] // window
    blocks = x.data[..., :l_out * window].reshape(shape[:-1] + (l_out, window))
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = np.zeros(shape)
        gx[..., :l_out * window] = gb.reshape(shape[:-1] + (l_out * window,))
        return (gx,)

    return Tensor._make(out, (x,), backward)


# ---------------------------------------------------------------------------
# fused recurrent kernel
# ---------------------------------------------------------------------------

def gru_sequence(x: Tensor, w_in: Tensor, w_hid: Tensor, bias: Tensor,
                 h0: Tensor | None = None) -> Tensor:
    """Run a GRU over ``x`` of shape ``(B, T, n_in)``; returns ``(B, T, h)``.

    Gate blocks in ``w_in`` ``(n_in, 3h)``, ``w_hid`` ``(h, 3h)`` and ``bias``
    ``(3h,)`` are ordered update, reset, candidate. The recurrence runs in
    the compiled kernel when available.
    """
    from .. import _kernels

    xd = x.data
    if xd.ndim != 3:
        raise ShapeError(f"gru_sequence expects (B, T, n_in), got {x.shape}")
    b, _, n_in = xd.shape
    hsize = w_hid.shape[0]
    if w_in.shape != (n_in, 3 * hsize) or w_hid.shape != (hsize, 3 * hsize) or bias.shape != (3 * hsize,):
        raise ShapeError(f"gru_sequence weight shapes {w_in.shape}, {w_hid.shape}, {bias.shape} "
                         f"inconsistent with n_in={n_in}, h={hsize}")
    h0d = np.zeros((b, hsize)) if h0 is None else np.broadcast_to(h0.data, (b, hsize))
    h0d = np.ascontiguousarray(h0d)
    # Input projections for every step in one BLAS call; the kernel owns the recurrence.
    ax = np.matmul(xd, w_in.data) + bias.data
    hs, cache = _kernels.gru_forward(np.ascontiguousarray(ax), w_hid.data, h0d)

    def backward(g):
        dax, dwh, dh0 = _kernels.gru_backward(np.ascontiguousarray(g), w_hid.data, h0d, hs, cache)
        gx = np.matmul(dax, w_in.data.T)
        gw_in = np.tensordot(xd, dax, axes=([0, 1], [0, 1]))
        gb = dax.sum(axis=(0, 1))
        grads = [gx, gw_in, dwh, gb]
        if h0 is not None:
            grads.append(_unbroadcast(dh0, h0.shape))
        return tuple(grads)

    parents = (x, w_in, w_hid, bias) if h0 is None else (x, w_in, w_hid, bias, h0)
    return Tensor._make(hs, parents, backward)


def rmse_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    return sqrt(mean(square(sub(pred, target))))


__all__ = [
    "as_tensor", "add", "sub", "mul", "scale", "tanh", "sigmoid", "exp", "square", "sqrt",
    "sum", "mean", "reshape", "transpose", "index", "concat", "concat_cols", "matmul",
    "softmax_rows", "conv1d", "max_pool1d", "gru_sequence", "rmse_loss",
]
