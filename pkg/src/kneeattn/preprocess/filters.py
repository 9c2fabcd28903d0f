"""Outlier replacement and Savitzky-Golay smoothing for 1-D series."""

from __future__ import annotations

import numpy as np

MAD_SCALE = 1.4826


def clean_outliers(series, window: int = 11, k: float = 6.0) -> np.ndarray:
    """Hampel filter with linear re-estimation of flagged points.

    A point is flagged when ``|x_i - median| > k * 1.4826 * MAD`` over the
    centred window (truncated at the ends). Each flagged point is replaced by
    the line through its two nearest unflagged neighbours, which
    interpolates inside the series and extrapolates at its ends.
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    if n < 4:
        raise ValueError("clean_outliers needs at least 4 samples")
    half = window // 2
    med = np.empty(n)
    mad = np.empty(n)
    if n > 2 * half:
        wins = np.lib.stride_tricks.sliding_window_view(x, 2 * half + 1)
        m = np.median(wins, axis=1)
        med[half:n - half] = m
        mad[half:n - half] = np.median(np.abs(wins - m[:, None]), axis=1)
    edges = [i for i in range(n) if i < half or i >= n - half]
    for i in edges:
        w = x[max(0, i - half):i + half + 1]
        med[i] = np.median(w)
        mad[i] = np.median(np.abs(w - med[i]))
    flagged = np.abs(x - med) > k * MAD_SCALE * mad
    keep = np.flatnonzero(~flagged)
    if keep.size < 2 or not flagged.any():
        return x.copy()
    out = x.copy()
    for i in np.flatnonzero(flagged):
        dist = np.abs(keep - i)
        a, b = sorted(keep[np.lexsort((keep, dist))[:2]])
        out[i] = x[a] + (x[b] - x[a]) * (i - a) / (b - a)
    return out


def savgol_coefficients(window: int, order: int, pos: int | None = None) -> np.ndarray:
    """Weights w such that ``w @ x_window`` is the fitted value at offset ``pos``."""
    if window % 2 != 1 or window < 1:
        raise ValueError("window must be a positive odd integer")
    if order >= window:
        raise ValueError(f"polynomial order {order} must be below window {window}")
    half = window // 2
    pos = half if pos is None else pos
    offsets = np.arange(window) - half
    vander = np.vander(offsets, order + 1, increasing=True)
    # Row of the hat matrix at ``pos``: evaluate the LS polynomial at that offset.
    at = (pos - half) ** np.arange(order + 1)
    return at @ np.linalg.pinv(vander)


def savitzky_golay(series, window: int = 11, order: int = 2) -> np.ndarray:
    """Local least-squares polynomial smoothing.

    Interior points take the fitted value at the window centre; the first and
    last ``window // 2`` points are evaluated from the fit over the first and
    last full windows.
    """
    if order >= window:
        raise ValueError(f"polynomial order {order} must be below window {window}")
    x = np.asarray(series, dtype=np.float64)
    if window % 2 != 1:
        raise ValueError("window must be odd")
    if x.size < window:
        raise ValueError(f"series of length {x.size} shorter than window {window}")
    half = window // 2
    out = np.empty_like(x)
    centre = savgol_coefficients(window, order)
    out[half:x.size - half] = np.correlate(x, centre, mode="valid")
    for p in range(half):
        out[p] = savgol_coefficients(window, order, pos=p) @ x[:window]
        out[x.size - half + p] = savgol_coefficients(window, order, pos=half + 1 + p) @ x[-window:]
    return out
