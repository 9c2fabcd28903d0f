"""Differentiable building blocks: GRU, temporal and cyclic attention, 1-D CNN head."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor


class ConfigError(ValueError):
    """Model configuration cannot be built."""


@dataclass
class GruParams:
    """Gate blocks ordered update, reset, candidate along the last axis."""

    w_in: Tensor   # (n_v, 3h)
    w_hid: Tensor  # (h, 3h)
    bias: Tensor   # (3h,)

    @property
    def h_size(self) -> int:
        return self.w_hid.shape[0]


def gru_forward(params: GruParams, x: Tensor, h0: Tensor | None = None) -> Tensor:
    """Hidden sequence of one cycle.

    ``x`` is ``(n_v, n_ts)`` (variables by timesteps); returns ``(n_ts, h)``.
    """
    seq = ad.reshape(ad.transpose(x), (1, x.shape[1], x.shape[0]))
    hs = ad.gru_sequence(seq, params.w_in, params.w_hid, params.bias,
                         None if h0 is None else ad.reshape(h0, (1, params.h_size)))
    return ad.reshape(hs, hs.shape[1:])


def gru_batch(params: GruParams, seqs: Tensor) -> Tensor:
    """``(B, n_ts, n_v) -> (B, n_ts, h)`` with zero initial state per sequence."""
    return ad.gru_sequence(seqs, params.w_in, params.w_hid, params.bias)


def gru_composed(params: GruParams, x: Tensor, h0: Tensor | None = None) -> Tensor:
    """GRU assembled from elementary ops, one timestep at a time.

    Slow; kept as an independent route for checking the fused kernel.
    ``x`` is ``(n_v, n_ts)``; returns ``(n_ts, h)``.
    """
    h = params.h_size
    n_ts = x.shape[1]
    w_in, w_hid, b = params.w_in, params.w_hid, params.bias
    blocks = [(slice(None), slice(k * h, (k + 1) * h)) for k in range(3)]
    wz, wr, wn = (ad.index(w_in, s) for s in blocks)
    uz, ur, un = (ad.index(w_hid, s) for s in blocks)
    bz, br, bn = (ad.index(b, slice(k * h, (k + 1) * h)) for k in range(3))
    hp = Tensor(np.zeros((1, h))) if h0 is None else ad.reshape(h0, (1, h))
    rows = []
    for t in range(n_ts):
        xt = ad.reshape(ad.index(x, (slice(None), t)), (1, x.shape[0]))
        z = ad.sigmoid(ad.add(ad.add(ad.matmul(xt, wz), ad.matmul(hp, uz)), bz))
        r = ad.sigmoid(ad.add(ad.add(ad.matmul(xt, wr), ad.matmul(hp, ur)), br))
        n = ad.tanh(ad.add(ad.add(ad.matmul(xt, wn), ad.matmul(ad.mul(r, hp), un)), bn))
        hp = ad.add(ad.mul(ad.sub(1.0, z), n), ad.mul(z, hp))
        rows.append(hp)
    return ad.concat(rows, axis=0)


TA_MODES = ("learned", "uniform", "last")


def temporal_attention(hs: Tensor, w_b: Tensor, mode: str = "learned"):
    """Attention-weighted context over the timestep axis.

    ``hs`` is ``(..., n_ts, h)``. Returns ``(context (..., h), scores (..., n_ts))``.
    ``mode="uniform"`` fixes every score at ``1/n_ts`` and ``mode="last"``
    puts all mass on the final timestep; both ignore ``w_b``.
    """
    n_ts = hs.shape[-2]
    if mode == "learned":
        logits = ad.reshape(ad.matmul(hs, ad.reshape(w_b, (w_b.shape[0], 1))), hs.shape[:-1])
        alpha = ad.softmax_rows(logits)
    elif mode == "uniform":
        alpha = Tensor(np.full(hs.shape[:-1], 1.0 / n_ts))
    elif mode == "last":
        one_hot = np.zeros(hs.shape[:-1])
        one_hot[..., -1] = 1.0
        alpha = Tensor(one_hot)
    else:
        raise ConfigError(f"unknown temporal-attention mode {mode!r}")
    lead = hs.shape[:-2]
    ctx = ad.matmul(ad.reshape(alpha, lead + (1, n_ts)), hs)
    return ad.reshape(ctx, lead + (hs.shape[-1],)), alpha


def self_attention(x: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor):
    """Scaled dot-product self-attention over rows of ``x`` ``(..., n, d_model)``.

    Returns ``(HE (..., n, d_v), AS (..., n, n))`` with AS rows indexed by
    query and columns by key.
    """
    q = ad.matmul(x, w_q)
    k = ad.matmul(x, w_k)
    v = ad.matmul(x, w_v)
    scores = ad.softmax_rows(ad.matmul(q, ad.transpose(k)), math.sqrt(w_k.shape[-1]))
    return ad.matmul(scores, v), scores


@dataclass
class MhaParams:
    """Per-head projections ``(d_model, he)`` and output map ``w_o`` ``(he, n_he * he)``."""

    w_q: list
    w_k: list
    w_v: list
    w_o: Tensor

    @property
    def n_he(self) -> int:
        return len(self.w_q)


def multi_head_attention(x: Tensor, params: MhaParams):
    """Concatenate per-head outputs and project back to ``he`` columns.

    Returns ``(output (..., n, he), [AS_1, ..., AS_nhe])``.
    """
    heads, maps = [], []
    for wq, wk, wv in zip(params.w_q, params.w_k, params.w_v):
        he, a = self_attention(x, wq, wk, wv)
        heads.append(he)
        maps.append(a)
    cat = heads[0] if len(heads) == 1 else ad.concat_cols(heads)
    return ad.matmul(cat, ad.transpose(params.w_o)), maps


@dataclass(frozen=True)
class CnnConfig:
    """Conv stack over the cycle axis.

    ``n_nonpool`` conv+tanh layers with ``filters`` channels, then ``n_pool``
    conv+tanh+maxpool(2) blocks whose filter count doubles per block, then a
    dense map to a scalar (through ``dense_hidden`` tanh units when > 0).
    """

    filters: int = 5
    kernel: int = 3
    n_pool: int = 1
    n_nonpool: int = 1
    dense_hidden: int = 0

    def layer_plan(self, channels: int, length: int):
        """[(c_in, c_out, pool)] per conv layer and the flattened width; checks lengths."""
        plan = []
        c = channels
        for _ in range(self.n_nonpool):
            plan.append((c, self.filters, False))
            c = self.filters
        for j in range(self.n_pool):
            plan.append((c, self.filters * 2 ** j, True))
            c = self.filters * 2 ** j
        n = length
        for c_in, c_out, pool in plan:
            if n < self.kernel:
                raise ConfigError(f"sequence of length {n} too short for kernel {self.kernel}")
            n = n - self.kernel + 1
            if pool:
                n //= 2
                if n < 1:
                    raise ConfigError("pooling reduced the sequence to zero length")
        return plan, c * n


def cnn_head(ctx: Tensor, convs: list, dense: list, cfg: CnnConfig) -> Tensor:
    """``ctx`` ``(N, n_cy, ch)`` -> predictions ``(N,)``.

    ``convs`` holds ``(kernels, bias)`` per layer in :meth:`CnnConfig.layer_plan`
    order; ``dense`` holds ``(weight, bias)`` pairs, the last mapping to 1.
    """
    x = ad.transpose(ctx)  # channels along rows, cycles along columns
    pools = [False] * cfg.n_nonpool + [True] * cfg.n_pool
    for (w, b), pool in zip(convs, pools):
        x = ad.tanh(ad.conv1d(x, w, b))
        if pool:
            x = ad.max_pool1d(x, 2)
    n = x.shape[0]
    x = ad.reshape(x, (n, x.size // n))
    for i, (w, b) in enumerate(dense):
        x = ad.add(ad.matmul(x, w), b)
        if i < len(dense) - 1:
            x = ad.tanh(x)
    return ad.reshape(x, (n,))
