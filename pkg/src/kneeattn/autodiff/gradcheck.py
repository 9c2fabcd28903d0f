"""Central finite-difference oracle for tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def numerical_gradient(loss_fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """d loss / d param by central differences, perturbing ``param.data`` in place."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(loss_fn().data.reshape(-1)[0])
        flat[i] = orig - h
        fm = float(loss_fn().data.reshape(-1)[0])
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(floor, |n|) over all entries."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(floor, np.abs(numeric))))


def check_gradients(loss_fn: Callable[[], Tensor], params, h: float = 1e-5) -> dict:
    """Relative error per named parameter; ``params`` maps name -> leaf Tensor."""
    for p in params.values():
        p.zero_grad()
    loss_fn().backward()
    errors = {}
    for name, p in params.items():
        analytic = p.grad.copy()
        numeric = numerical_gradient(loss_fn, p, h=h)
        errors[name] = max_relative_error(analytic, numeric)
    return errors
