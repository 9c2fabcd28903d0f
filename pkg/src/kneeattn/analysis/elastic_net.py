"""Elastic-net baseline on per-cycle voltage/current/temperature summaries."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..train import Split, rmse, target_of

SUMMARY_VARS = ("V", "I", "T")


def vit_features(record, n_cy: int) -> np.ndarray:
    """Mean, std, min and max of V, I and T for each of the first ``n_cy`` cycles, flattened."""
    if record.n_cycles < n_cy:
        raise ValueError(f"{record.cell_id}: {record.n_cycles} traced cycles, {n_cy} required")
    feats = []
    for c in record.cycles[:n_cy]:
        for name in SUMMARY_VARS:
            s = getattr(c, name)
            feats += [s.mean(), s.std(), s.min(), s.max()]
    return np.array(feats)


def en_objective(x, y, w, b, lam, rho) -> float:
    r = y - x @ w - b
    return float(r @ r / (2 * len(y)) + lam * (rho * np.abs(w).sum() + 0.5 * (1 - rho) * w @ w))


def soft_threshold(c: float, t: float) -> float:
    return np.sign(c) * max(abs(c) - t, 0.0)


def elastic_net(x, y, lam: float, rho: float, tol: float = 1e-10, max_sweeps: int = 10_000,
                w0=None, history: list | None = None):
    """Cyclic coordinate descent for

    ``(1/2n)||y - Xw - b||^2 + lam * (rho ||w||_1 + (1 - rho)/2 ||w||^2)``.

    The intercept is unpenalised and refitted exactly after each sweep.
    Stops when no coefficient moves by more than ``tol``. Returns ``(w, b)``;
    when ``history`` is a list the objective after each sweep is appended.
    """
    if lam < 0 or not 0 <= rho <= 1:
        raise ValueError("need lam >= 0 and 0 <= rho <= 1")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    w = np.zeros(p) if w0 is None else np.array(w0, dtype=float)
    b = float(np.mean(y - x @ w))
    col_sq = (x * x).sum(axis=0) / n
    r = y - x @ w - b
    l1, l2 = lam * rho, lam * (1 - rho)
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(p):
            denom = col_sq[j] + l2
            if denom == 0:
                continue
            old = w[j]
            z = x[:, j] @ r / n + col_sq[j] * old
            new = soft_threshold(z, l1) / denom
            if new != old:
                r -= x[:, j] * (new - old)
                w[j] = new
                delta = max(delta, abs(new - old))
        shift = r.mean()
        b += shift
        r -= shift
        if history is not None:
            history.append(en_objective(x, y, w, b, lam, rho))
        if delta <= tol and abs(shift) <= tol:
            break
    return w, b


@dataclass
class EnResult:
    n_cy: int
    lam: float
    rho: float
    val_rmse: float
    test_rmse: float
    n_nonzero: int


def elastic_net_benchmark(records, labels, split: Split, n_cy: int,
                          lambdas=(1e-3, 1e-2, 1e-1, 1.0, 10.0), rhos=(0.1, 0.5, 0.9, 1.0)) -> EnResult:
    """Fit on training cells, pick (lambda, rho) by validation RMSE, score test cells.

    Features are standardised with training statistics; targets are in cycles.
    """
    by_id = {r.cell_id: r for r in records}

    def design(ids):
        return (np.array([vit_features(by_id[c], n_cy) for c in ids]),
                np.array([target_of(labels[c]) for c in ids]))

    x_tr, y_tr = design(split.train)
    x_va, y_va = design(split.val)
    x_te, y_te = design(split.test)
    mu = x_tr.mean(axis=0)
    sd = x_tr.std(axis=0)
    sd[sd == 0] = 1.0
    z = [(m - mu) / sd for m in (x_tr, x_va, x_te)]
    best = None
    for lam, rho in itertools.product(lambdas, rhos):
        w, b = elastic_net(z[0], y_tr, lam, rho, tol=1e-8, max_sweeps=2000)
        val = rmse(z[1] @ w + b, y_va)
        if best is None or val < best[0]:
            best = (val, lam, rho, w, b)
    val, lam, rho, w, b = best
    return EnResult(n_cy, lam, rho, val, rmse(z[2] @ w + b, y_te), int(np.count_nonzero(w)))


TABLE_SIZES = (100, 80, 50, 30)


def write_table(rows, path, sizes=TABLE_SIZES) -> Path:
    """CSV with one row per (dataset, method) and one test-RMSE column per input size.

    ``rows`` holds dicts ``{dataset, method, n_cy: rmse, ...}``; missing
    entries are written as ``-``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "method"] + [f"{n} cycles" for n in sizes])
        for row in rows:
            w.writerow([row["dataset"], row["method"]]
                       + [f"{row[n]:.2f}" if row.get(n) is not None else "-" for n in sizes])
    return path
