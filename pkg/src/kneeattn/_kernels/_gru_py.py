"""Numpy reference for the GRU recurrence; used when the compiled kernel is absent."""

import numpy as np


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(ax, wh, h0):
    """Recurrence given precomputed input projections.

    ``ax`` is ``(B, T, 3h)`` (input projection plus bias, gate order z, r, n),
    ``wh`` is ``(h, 3h)`` and ``h0`` is ``(B, h)``. Returns the hidden
    sequence ``(B, T, h)`` and the gate cache needed by :func:`gru_backward`.
    """
    b, t_len, three_h = ax.shape
    h = three_h // 3
    whz, whr, whn = wh[:, :h], wh[:, h:2 * h], wh[:, 2 * h:]
    hs = np.empty((b, t_len, h))
    cache = np.empty((b, t_len, 3 * h))
    hp = h0
    for t in range(t_len):
        a = ax[:, t]
        z = _sigmoid(a[:, :h] + hp @ whz)
        r = _sigmoid(a[:, h:2 * h] + hp @ whr)
        n = np.tanh(a[:, 2 * h:] + (r * hp) @ whn)
        hp = (1.0 - z) * n + z * hp
        hs[:, t] = hp
        cache[:, t, :h] = z
        cache[:, t, h:2 * h] = r
        cache[:, t, 2 * h:] = n
    return hs, cache


def gru_backward(dhs, wh, h0, hs, cache):
    """Gradients w.r.t. ``ax``, ``wh`` and ``h0`` given upstream ``dhs``."""
    b, t_len, h = dhs.shape
    whz, whr, whn = wh[:, :h], wh[:, h:2 * h], wh[:, 2 * h:]
    dax = np.empty((b, t_len, 3 * h))
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((b, h))
    for t in range(t_len - 1, -1, -1):
        hp = hs[:, t - 1] if t > 0 else h0
        z = cache[:, t, :h]
        r = cache[:, t, h:2 * h]
        n = cache[:, t, 2 * h:]
        dh = dhs[:, t] + dh_next
        dan = dh * (1.0 - z) * (1.0 - n * n)
        daz = dh * (hp - n) * z * (1.0 - z)
        drh = dan @ whn.T
        dar = drh * hp * r * (1.0 - r)
        dwh[:, 2 * h:] += (r * hp).T @ dan
        dwh[:, :h] += hp.T @ daz
        dwh[:, h:2 * h] += hp.T @ dar
        dh_next = dh * z + drh * r + daz @ whz.T + dar @ whr.T
        dax[:, t, :h] = daz
        dax[:, t, h:2 * h] = dar
        dax[:, t, 2 * h:] = dan
    return dax, dwh, dh_next
