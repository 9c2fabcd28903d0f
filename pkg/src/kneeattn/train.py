"""Full-batch training with Adam and early stopping; multi-seed runs and grid sweeps."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .models import CnnConfig, KneeModel, ModelConfig
from .preprocess.inputs import Normalizer, build_raw

log = logging.getLogger(__name__)

FULL_CORPUS = 124
FULL_COUNTS = (80, 20, 24)


def rmse(preds, targets) -> float:
    """Root mean squared error."""
    p = np.asarray(preds, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.size == 0 or p.size != t.size:
        raise ValueError(f"rmse needs equal non-empty inputs, got {p.size} and {t.size}")
    return float(np.sqrt(np.mean((p - t) ** 2)))


# ---------------------------------------------------------------------------
# optimiser and stopping rule
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> AdamState:
    """Bias-corrected Adam update applied in place to ``params`` (name -> ndarray or Tensor)."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=float)
        data = p.data if isinstance(p, ad.Tensor) else p
        if g.shape != data.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {data.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


class EarlyStopping:
    """Track the best validation loss; stop after ``patience`` epochs without improvement.

    The patience counter only runs once ``warmup`` epochs have passed, so
    an early transient rise in validation loss cannot end training.
    """

    def __init__(self, patience: int, warmup: int = 0):
        if patience < 0 or warmup < 0:
            raise ValueError("patience and warmup must be non-negative")
        self.patience = patience
        self.warmup = warmup
        self.best = math.inf
        self.best_epoch = 0
        self.epoch = 0
        self.history: list = []

    def update(self, loss: float) -> bool:
        """Record one epoch; returns True when this epoch is the new best."""
        self.epoch += 1
        self.history.append(float(loss))
        if loss < self.best:
            self.best = float(loss)
            self.best_epoch = self.epoch
            return True
        return False

    @property
    def should_stop(self) -> bool:
        return self.epoch - max(self.best_epoch, self.warmup) >= self.patience


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Random train/validation/test partition.

    ``counts`` fixes (train, val, test); otherwise validation and test take
    floor(n * 20/124) and floor(n * 24/124) cells and training keeps the rest.
    """

    seed: int = 0
    counts: tuple | None = None


@dataclass(frozen=True)
class Split:
    train: tuple
    val: tuple
    test: tuple


def split_counts(n: int) -> tuple:
    val = n * FULL_COUNTS[1] // FULL_CORPUS
    test = n * FULL_COUNTS[2] // FULL_CORPUS
    return n - val - test, val, test


def make_split(cell_ids, spec: SplitSpec) -> Split:
    ids = sorted(cell_ids)
    counts = spec.counts or split_counts(len(ids))
    if sum(counts) != len(ids) or min(counts) < 0:
        raise ValueError(f"split counts {counts} do not cover {len(ids)} cells")
    order = np.random.default_rng(spec.seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    a, b = counts[0], counts[0] + counts[1]
    return Split(tuple(sorted(shuffled[:a])), tuple(sorted(shuffled[a:b])), tuple(sorted(shuffled[b:])))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainSpec:
    lr: float = 1e-2
    max_epochs: int = 500
    patience: int = 30
    seeds: tuple = (0, 1, 2, 3, 4)
    warmup: int = 0

    def __post_init__(self):
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        if not 0 <= self.warmup <= self.max_epochs:
            raise ValueError("warmup must lie in [0, max_epochs]")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class RunResult:
    seed: int
    best_epoch: int
    epochs_run: int
    train_rmse: float
    val_rmse: float
    test_rmse: float | None
    train_history: list
    val_history: list
    diverged: bool = False
    wall_time: float = 0.0
    test_predictions: dict = field(default_factory=dict)


def target_of(label) -> float:
    return float(label.c_ko if hasattr(label, "c_ko") else label)


def usable_cells(records, labels, n_cy: int) -> list:
    return [r.cell_id for r in records if r.cell_id in labels and r.n_cycles >= n_cy]


def prepare_inputs(records, ids, variant: str, n_cy: int, normalizer: Normalizer | None = None,
                   config=None):
    """Stacked ``(N, n_cy, n_ts, n_v)`` inputs for ``ids`` plus the normalizer used.

    The normalizer is fitted on these cells when none is given.
    """
    by_id = {r.cell_id: r for r in records}
    raws = [build_raw(by_id[c], variant, n_cy, config) for c in ids]
    if normalizer is None:
        normalizer = Normalizer.fit(raws)
    x = np.stack([normalizer.apply(t).as_sequence() for t in raws]) if raws else None
    return x, normalizer


def _eval(model: KneeModel, x, y):
    if x is None or len(y) == 0:
        return None, np.zeros(0)
    pred = model.predict(x)
    return rmse(pred, y), pred


def train(config: ModelConfig, records, labels, split: Split, spec: TrainSpec,
          seed: int | None = None) -> tuple[RunResult, KneeModel]:
    """Train one model; returns the run record and the model at its best validation epoch.

    Only training cells inform the input normaliser, target scaling and
    gradients; validation drives early stopping; test cells are scored once
    at the end and may be absent from ``records``.
    """
    t0 = time.perf_counter()
    seed = config.seed if seed is None else seed
    config = replace(config, seed=seed)
    present = {r.cell_id for r in records}
    x_tr, norm = prepare_inputs(records, split.train, config.variant, config.n_cy)
    x_va, _ = prepare_inputs(records, split.val, config.variant, config.n_cy, norm)
    test_ids = [c for c in split.test if c in present]
    x_te, _ = prepare_inputs(records, test_ids, config.variant, config.n_cy, norm)
    if config.n_ts is not None and config.n_ts != x_tr.shape[2]:
        raise ValueError(f"config n_ts={config.n_ts} but inputs have {x_tr.shape[2]} timesteps")
    y_tr = np.array([target_of(labels[c]) for c in split.train])
    y_va = np.array([target_of(labels[c]) for c in split.val])
    y_te = np.array([target_of(labels[c]) for c in test_ids])

    model = KneeModel(config, target_range=(y_tr.min(), y_tr.max()), normalizer=norm.to_dict())
    yn_tr = model.scale_target(y_tr)
    state = AdamState()
    stopper = EarlyStopping(spec.patience, spec.warmup)
    best = model.get_flat()
    train_hist, diverged = [], False
    span = model.target_range[1] - model.target_range[0] or 1.0
    for epoch in range(1, spec.max_epochs + 1):
        for p in model.parameters():
            p.zero_grad()
        loss = ad.rmse_loss(model.forward(x_tr).pred, yn_tr)
        lval = loss.item()
        if not np.isfinite(lval):
            diverged = True
            log.warning("seed %d diverged at epoch %d", seed, epoch)
            break
        grads = loss.backward()
        adam_step(model.params, {k: grads.get(p, np.zeros(p.shape)) for k, p in model.params.items()},
                  state, spec.lr)
        train_hist.append(lval * span)
        val, _ = _eval(model, x_va, y_va)
        val = np.inf if val is None or not np.isfinite(val) else val
        if stopper.update(val):
            best = model.get_flat()
        if stopper.should_stop:
            break
    model.set_flat(best)
    tr, _ = _eval(model, x_tr, y_tr)
    va, _ = _eval(model, x_va, y_va)
    te, pred_te = _eval(model, x_te, y_te)
    result = RunResult(seed, stopper.best_epoch, stopper.epoch, tr, va, te, train_hist, stopper.history,
                       diverged, time.perf_counter() - t0,
                       {c: float(p) for c, p in zip(test_ids, pred_te)})
    return result, model


# ---------------------------------------------------------------------------
# multi-seed reports
# ---------------------------------------------------------------------------

@dataclass
class TrainReport:
    config: dict
    lr: float
    runs: list
    wall_time: float = 0.0

    def _stat(self, key):
        vals = np.array([getattr(r, key) for r in self.runs if getattr(r, key) is not None], dtype=float)
        if vals.size == 0:
            return None, None
        return float(vals.mean()), float(vals.std())

    def summary(self) -> dict:
        out = {}
        for key in ("train_rmse", "val_rmse", "test_rmse"):
            mean, std = self._stat(key)
            out[f"{key}_mean"], out[f"{key}_std"] = mean, std
        return out

    def to_dict(self) -> dict:
        return {"config": self.config, "lr": self.lr, "runs": [asdict(r) for r in self.runs],
                "summary": self.summary(), "wall_time": self.wall_time}


def _run_one(args):
    config, records, labels, spec, seed = args
    ids = usable_cells(records, labels, config.n_cy)
    split = make_split(ids, SplitSpec(seed))
    result, model = train(config, records, labels, split, spec, seed=seed)
    return result, model.to_dict()


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def run_seeds(config: ModelConfig, records, labels, spec: TrainSpec, jobs: int = 1):
    """Train once per seed in ``spec.seeds`` (split and initialisation both follow the seed).

    Returns ``(TrainReport, checkpoints)`` with one checkpoint dict per seed.
    """
    t0 = time.perf_counter()
    outs = _map(_run_one, [(config, records, labels, spec, s) for s in spec.seeds], jobs)
    report = TrainReport(config.to_dict(), spec.lr, [o[0] for o in outs], time.perf_counter() - t0)
    return report, [o[1] for o in outs]


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

#: Searched values per architecture family.
GRIDS = {
    "rnn_1dcnn": {"lr": (1e-5, 1e-4, 1e-3, 1e-2), "filters": (8,), "kernel": (2, 3, 4, 5),
                  "n_pool": (1, 2), "n_nonpool": (1, 2), "h_size": (3, 5, 7), "n_he": (1,)},
    "attention": {"lr": (1e-4, 5e-4, 1e-3, 5e-3, 1e-2), "filters": (3, 5, 7), "kernel": (3,),
                  "n_pool": (1, 2), "n_nonpool": (1, 2), "h_size": (3, 5, 7), "n_he": (1,)},
}


def standard_grid(architecture: str, heads=(1, 2, 3, 4, 5)) -> list:
    """Hyperparameter combinations searched for ``architecture``."""
    g = dict(GRIDS["rnn_1dcnn" if architecture == "rnn_1dcnn" else "attention"])
    if architecture == "rnn_ta_ca_1dcnn":
        g["n_he"] = tuple(heads)
    keys = list(g)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(g[k] for k in keys))]


def config_from_point(base: ModelConfig, point: dict) -> tuple[ModelConfig, float]:
    cnn = replace(base.cnn, **{k: point[k] for k in ("filters", "kernel", "n_pool", "n_nonpool") if k in point})
    fields = {k: point[k] for k in ("h_size", "n_he", "he_size") if k in point}
    return replace(base, cnn=cnn, **fields), float(point.get("lr", 1e-2))


@dataclass
class GridResult:
    best: dict
    table: list  # one dict per grid point: point, val/test mean and std
    rows: list   # one dict per (grid point, seed)


def _grid_task(args):
    base, point, records, labels, spec, seed = args
    config, lr = config_from_point(base, point)
    res, _ = _run_one((config, records, labels, replace(spec, lr=lr), seed))
    return res


def grid_search(base: ModelConfig, grid: list, records, labels, spec: TrainSpec,
                jobs: int = 1) -> GridResult:
    """Train every grid point for every seed; pick the lowest mean validation RMSE.

    Each (point, seed) run depends only on its own inputs, so enumeration
    order does not affect any result.
    """
    if not grid:
        raise ValueError("empty grid")
    tasks = [(base, p, records, labels, spec, s) for p in grid for s in spec.seeds]
    results = _map(_grid_task, tasks, jobs)
    table, rows = [], []
    k = 0
    for point in grid:
        runs = results[k:k + len(spec.seeds)]
        k += len(spec.seeds)
        val = np.array([r.val_rmse for r in runs], dtype=float)
        test = np.array([np.nan if r.test_rmse is None else r.test_rmse for r in runs], dtype=float)
        table.append({"point": point, "val_mean": float(val.mean()), "val_std": float(val.std()),
                      "test_mean": float(test.mean()), "test_std": float(test.std())})
        for r in runs:
            rows.append({**point, "seed": r.seed, "best_epoch": r.best_epoch, "train_rmse": r.train_rmse,
                         "val_rmse": r.val_rmse, "test_rmse": r.test_rmse, "diverged": r.diverged})
    vals = [t["val_mean"] if np.isfinite(t["val_mean"]) else np.inf for t in table]
    best = table[int(np.argmin(vals))]
    return GridResult(best, table, rows)


def write_report(report: TrainReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=1, default=_json_default))
    return path


def write_grid_csv(result: GridResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not result.rows:
        path.write_text("")
        return path
    keys = list(result.rows[0])
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        w.writerows(result.rows)
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, CnnConfig):
        return asdict(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")
