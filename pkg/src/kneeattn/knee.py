"""Knee-onset labels from a double Bacon-Watts fit of the capacity-fade curve.

Capacity is modelled as::

    Q(c) = a0 + a1 (c - c_ko) + a2 (c - c_ko) tanh((c - c_ko) / gamma)
              + a3 (c - c_2nd) tanh((c - c_2nd) / gamma)

With ``gamma`` fixed the model is linear in ``a0..a3`` for given breakpoints,
so the fit profiles the coefficients out by ordinary least squares and
searches only over ``(c_ko, c_2nd)``: a coarse grid, then Nelder-Mead.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

log = logging.getLogger(__name__)

LOW_CONFIDENCE = "low-confidence"
MIN_POINTS = 20


class KneeLabelError(ValueError):
    """The fade curve cannot be labelled."""


@dataclass
class KneeLabel:
    c_ko: float
    c_2nd: float
    alpha0: float
    alpha1: float
    alpha2: float
    alpha3: float
    gamma: float
    sse: float
    flag: str = ""

    @property
    def alphas(self) -> np.ndarray:
        return np.array([self.alpha0, self.alpha1, self.alpha2, self.alpha3])


def design_matrix(cycles, c_ko: float, c_2nd: float, gamma: float) -> np.ndarray:
    c = np.asarray(cycles, dtype=float)
    u = c - c_ko
    v = c - c_2nd
    return np.column_stack([np.ones_like(c), u, u * np.tanh(u / gamma), v * np.tanh(v / gamma)])


def double_bacon_watts(cycles, alphas, c_ko: float, c_2nd: float, gamma: float) -> np.ndarray:
    """Evaluate the noise-free fade model."""
    return design_matrix(cycles, c_ko, c_2nd, gamma) @ np.asarray(alphas, dtype=float)


def _profile_sse(x, y, ko, c2, gamma):
    """SSE of the OLS fit at one breakpoint pair, from explicit residuals."""
    sc = max(1.0, float(x[-1]))
    d = design_matrix(x, ko, c2, gamma)
    d[:, 1:] /= sc
    coef = np.linalg.lstsq(d, y, rcond=None)[0]
    r = y - d @ coef
    return float(r @ r)


def _sse_from_normal(gram, rhs, yy):
    coef = (np.linalg.pinv(gram, hermitian=True) @ rhs[..., None])[..., 0]
    return np.maximum(yy - np.einsum("mi,mi->m", coef, rhs), 0.0)


def _grid_sse(x, y, points, gamma):
    """Profiled SSE for every pair ``points[i] <= points[j]``.

    The hinge column for the second breakpoint at ``points[j]`` is the same
    function as the first-breakpoint hinge at ``points[j]``, so all Gram
    entries come from a handful of G x G inner-product matrices.
    """
    s = max(1.0, float(x[-1]))
    u = (x[None, :] - points[:, None])
    lin = u / s
    hinge = lin * np.tanh(u / gamma)
    n = float(x.size)
    sl, sh = lin.sum(axis=1), hinge.sum(axis=1)
    ll = np.einsum("gn,gn->g", lin, lin)
    lh = lin @ hinge.T
    hh = hinge @ hinge.T
    yl, yh = lin @ y, hinge @ y
    i, j = np.triu_indices(points.size)
    m = i.size
    gram = np.empty((m, 4, 4))
    gram[:, 0, 0] = n
    gram[:, 0, 1] = gram[:, 1, 0] = sl[i]
    gram[:, 0, 2] = gram[:, 2, 0] = sh[i]
    gram[:, 0, 3] = gram[:, 3, 0] = sh[j]
    gram[:, 1, 1] = ll[i]
    gram[:, 1, 2] = gram[:, 2, 1] = lh[i, i]
    gram[:, 1, 3] = gram[:, 3, 1] = lh[i, j]
    gram[:, 2, 2] = hh[i, i]
    gram[:, 2, 3] = gram[:, 3, 2] = hh[i, j]
    gram[:, 3, 3] = hh[j, j]
    rhs = np.column_stack([np.full(m, y.sum()), yl[i], yh[i], yh[j]])
    return i, j, _sse_from_normal(gram, rhs, float(y @ y))


def _ols(x, y, ko, c2, gamma):
    d = design_matrix(x, ko, c2, gamma)
    coef, _, rank, _ = np.linalg.lstsq(d, y, rcond=None)
    resid = y - d @ coef
    return coef, float(resid @ resid), rank


def fit_double_bacon_watts(cycles, capacity, gamma: float = 10.0, grid_points: int = 100,
                           refine: bool = True) -> KneeLabel:
    """Least-squares double Bacon-Watts fit with ``gamma`` held fixed.

    Parameters
    ----------
    cycles, capacity : array_like
        Fade curve, at least 20 points, capacity positive.
    gamma : float
        Transition sharpness in cycles.
    grid_points : int
        Coarse grid step is ``max(1, N / grid_points)`` cycles.
    refine : bool
        Run Nelder-Mead from the best grid candidate.

    Returns
    -------
    KneeLabel
        ``flag`` is ``"low-confidence"`` when the fit reduces the SSE of a
        single straight line by less than 5%.
    """
    c = np.asarray(cycles, dtype=float)
    y = np.asarray(capacity, dtype=float)
    if c.shape != y.shape or c.ndim != 1:
        raise KneeLabelError("cycles and capacity must be 1-D arrays of equal length")
    if c.size < MIN_POINTS:
        raise KneeLabelError(f"need at least {MIN_POINTS} points, got {c.size}")
    if not np.all(np.isfinite(y)) or np.any(y <= 0):
        raise KneeLabelError("capacity must be finite and positive")
    order = np.argsort(c, kind="stable")
    c, y = c[order], y[order]
    origin = c[0]
    x = c - origin
    span = x[-1]
    if span <= 0:
        raise KneeLabelError("degenerate fade curve: all points share one cycle index")

    step = max(1.0, c.size / grid_points)
    points = np.arange(0.0, span + 1e-9, step)
    gi, gj, sse_grid = _grid_sse(x, y, points, gamma)
    best = int(np.argmin(sse_grid))
    ko, dl = points[gi[best]], points[gj[best]] - points[gi[best]]
    best_sse = _profile_sse(x, y, ko, ko + dl, gamma)

    if refine:
        def objective(p):
            k = min(max(p[0], 0.0), span)
            c2 = min(k + abs(p[1]), span)
            return _profile_sse(x, y, k, c2, gamma)

        simplex = np.array([[ko, dl], [ko + step, dl], [ko, dl + step]])
        res = minimize(objective, np.array([ko, dl]), method="Nelder-Mead",
                       options={"initial_simplex": simplex, "xatol": 1e-8, "fatol": 1e-18,
                                "maxiter": 4000, "maxfev": 8000})
        if res.fun <= best_sse:
            ko = min(max(res.x[0], 0.0), span)
            dl = min(ko + abs(res.x[1]), span) - ko

    c2 = ko + dl
    coef, sse, rank = _ols(x, y, ko, c2, gamma)
    if rank < (4 if dl > 0 else 3) or not np.all(np.isfinite(coef)):
        raise KneeLabelError("singular least-squares system for the fitted breakpoints")

    line = np.column_stack([np.ones_like(x), x])
    lcoef = np.linalg.lstsq(line, y, rcond=None)[0]
    sse_line = float(np.sum((y - line @ lcoef) ** 2))
    reduction = (sse_line - sse) / sse_line if sse_line > 0 else 0.0
    flag = LOW_CONFIDENCE if reduction < 0.05 else ""
    # The design depends on c only through c - c_ko, so alphas need no shift back.
    return KneeLabel(float(ko + origin), float(c2 + origin), *map(float, coef), float(gamma), sse, flag)


def label_corpus(records, gamma: float = 10.0, clean: bool = True) -> tuple[dict, dict]:
    """Label every cell; returns ``(labels, failures)`` keyed by cell id.

    ``failures`` maps cell id to the error message; a failed cell never
    stops the others.
    """
    from .preprocess.filters import clean_outliers  # deferred: preprocess imports this module

    labels, failures = {}, {}
    for rec in records:
        try:
            cyc, cap = rec.fade_curve()
            if clean and cap.size >= 4:
                cap = clean_outliers(cap)
            labels[rec.cell_id] = fit_double_bacon_watts(cyc, cap, gamma=gamma)
        except (KneeLabelError, ValueError) as exc:
            failures[rec.cell_id] = str(exc)
            log.warning("labelling %s failed: %s", rec.cell_id, exc)
    return labels, failures


LABEL_COLUMNS = ["cell_id", "c_ko", "c_2nd", "alpha0", "alpha1", "alpha2", "alpha3", "gamma", "sse", "flag"]


def write_labels(labels: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_COLUMNS)
        for cid, lab in labels.items():
            d = asdict(lab)
            w.writerow([cid] + [repr(d[k]) if isinstance(d[k], float) else d[k] for k in LABEL_COLUMNS[1:]])
    return path


def read_labels(path) -> dict:
    labels = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            missing = [k for k in ("cell_id", "c_ko") if k not in row]
            if missing:
                raise ValueError(f"labels file lacks column {missing[0]}")
            vals = {k: float(row[k]) if row.get(k) not in (None, "") else float("nan")
                    for k in LABEL_COLUMNS[1:-1]}
            labels[row["cell_id"]] = KneeLabel(**vals, flag=row.get("flag", "") or "")
    return labels
