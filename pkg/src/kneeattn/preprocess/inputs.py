"""Per-cell input matrices for the three dataset variants, and min-max scaling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .filters import clean_outliers, savitzky_golay
from .records import CellRecord, CycleTrace, IngestError

log = logging.getLogger(__name__)

VARIANTS = {
    "combined": ("V", "I", "T", "Qc", "Qd"),
    "charging_only": ("V", "I", "T", "Qc"),
    "discharging_only": ("dQdV", "Qd", "T"),
}
N_TIMESTEPS = {"combined": 120, "charging_only": 40, "discharging_only": 1000}


@dataclass(frozen=True)
class PreprocessConfig:
    """Cleaning and resampling settings shared by every variant."""

    outlier_vars: tuple = ("T",)
    smooth_vars: tuple = ("T",)
    hampel_window: int = 11
    hampel_k: float = 6.0
    sg_window: int = 11
    sg_order: int = 2
    grid_step_min: float = 0.5
    v_high: float = 3.5
    v_low: float = 2.0
    current_eps: float = 5e-3


@dataclass
class InputTensor:
    """``data`` is ``n_v x (n_cy * n_ts)``, cycle-major along columns.

    ``mask`` marks columns backed by measurements (False on zero padding).
    ``var_min``/``var_max`` are the normalisation bounds, or None while the
    tensor still holds raw values.
    """

    variant: str
    cell_id: str
    n_cy: int
    n_ts: int
    data: np.ndarray
    mask: np.ndarray
    var_min: np.ndarray | None = None
    var_max: np.ndarray | None = None

    @property
    def n_v(self) -> int:
        return self.data.shape[0]

    @property
    def normalized(self) -> bool:
        return self.var_min is not None

    def as_sequence(self) -> np.ndarray:
        """(n_cy, n_ts, n_v) view for the recurrent encoder."""
        return self.data.reshape(self.n_v, self.n_cy, self.n_ts).transpose(1, 2, 0)


def _clean_cycle(trace: CycleTrace, cfg: PreprocessConfig, select=None) -> dict:
    """Outlier-clean and smooth the configured series, optionally on a sample subset only."""
    out = {name: getattr(trace, name) for name in ("t", "V", "I", "T", "Qc", "Qd")}
    if select is not None:
        out = {k: v[select] for k, v in out.items()}
    for name in cfg.outlier_vars:
        if name in out and len(out[name]) >= 4:
            out[name] = clean_outliers(out[name], cfg.hampel_window, cfg.hampel_k)
    for name in cfg.smooth_vars:
        if name in out and len(out[name]) >= cfg.sg_window:
            out[name] = savitzky_golay(out[name], cfg.sg_window, cfg.sg_order)
    return out


def _combined(trace: CycleTrace, n_ts: int, cfg: PreprocessConfig, where: str):
    s = _clean_cycle(trace, cfg)
    t = s["t"] - s["t"][0]
    grid = np.arange(n_ts) * cfg.grid_step_min
    span = n_ts * cfg.grid_step_min
    if t[-1] > span:
        log.warning("%s lasts %.1f min, truncated to %.0f min", where, t[-1], span)
    mask = grid < t[-1]
    block = np.zeros((5, n_ts))
    for r, name in enumerate(VARIANTS["combined"]):
        block[r, mask] = np.interp(grid[mask], t, s[name])
    return block, mask


def _charging(trace: CycleTrace, n_ts: int, cfg: PreprocessConfig, where: str):
    # Segment before cleaning so discharge samples never leak into the filters.
    on = trace.I > cfg.current_eps
    block = np.zeros((4, n_ts))
    if on.sum() < 2:
        log.warning("%s has no charge segment", where)
        return block, np.zeros(n_ts, dtype=bool)
    s = _clean_cycle(trace, cfg, on)
    grid = np.linspace(s["t"][0], s["t"][-1], n_ts)
    for r, name in enumerate(VARIANTS["charging_only"]):
        block[r] = np.interp(grid, s["t"], s[name])
    return block, np.ones(n_ts, dtype=bool)


def voltage_grid(cfg: PreprocessConfig, n_ts: int = N_TIMESTEPS["discharging_only"]) -> np.ndarray:
    """Descending voltage axis of the discharge variant."""
    return np.linspace(cfg.v_high, cfg.v_low, n_ts)


def _discharging(trace: CycleTrace, n_ts: int, cfg: PreprocessConfig, where: str):
    on = trace.I < -cfg.current_eps
    block = np.zeros((3, n_ts))
    if on.sum() < 2:
        log.warning("%s has no discharge segment", where)
        return block, np.zeros(n_ts, dtype=bool)
    s = _clean_cycle(trace, cfg, on)
    v, inv = np.unique(s["V"], return_inverse=True)
    counts = np.bincount(inv)
    q = np.bincount(inv, weights=s["Qd"]) / counts
    temp = np.bincount(inv, weights=s["T"]) / counts
    grid = voltage_grid(cfg, n_ts)
    q_grid = np.interp(grid, v, q)
    if n_ts >= cfg.sg_window:
        q_grid = savitzky_golay(q_grid, cfg.sg_window, cfg.sg_order)
    block[0] = np.gradient(q_grid, grid)
    block[1] = q_grid
    block[2] = np.interp(grid, v, temp)
    return block, np.ones(n_ts, dtype=bool)


_BUILDERS = {"combined": _combined, "charging_only": _charging, "discharging_only": _discharging}


def build_raw(record: CellRecord, variant: str, n_cy: int,
              config: PreprocessConfig | None = None) -> InputTensor:
    """Resampled, padded, un-normalised input matrix for the first ``n_cy`` cycles."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    if record.n_cycles < n_cy:
        raise IngestError(f"{record.cell_id}: {record.n_cycles} traced cycles, {n_cy} required")
    cfg = config or PreprocessConfig()
    n_ts = N_TIMESTEPS[variant]
    data = np.zeros((len(VARIANTS[variant]), n_cy * n_ts))
    mask = np.zeros(n_cy * n_ts, dtype=bool)
    builder = _BUILDERS[variant]
    for j, trace in enumerate(record.cycles[:n_cy]):
        block, m = builder(trace, n_ts, cfg, f"{record.cell_id} cycle {trace.cycle}")
        data[:, j * n_ts:(j + 1) * n_ts] = block
        mask[j * n_ts:(j + 1) * n_ts] = m
    return InputTensor(variant, record.cell_id, n_cy, n_ts, data, mask)


@dataclass
class Normalizer:
    """Per-variable min-max scaling fitted on training tensors."""

    variant: str
    var_min: np.ndarray
    var_max: np.ndarray
    names: tuple = field(default=())

    @classmethod
    def fit(cls, tensors) -> "Normalizer":
        tensors = list(tensors)
        if not tensors:
            raise ValueError("cannot fit a normalizer on an empty set")
        variant = tensors[0].variant
        stacked = np.concatenate([t.data[:, t.mask] for t in tensors], axis=1)
        if stacked.shape[1] == 0:
            raise ValueError("no measured values to fit the normalizer")
        return cls(variant, stacked.min(axis=1), stacked.max(axis=1), VARIANTS[variant])

    @classmethod
    def fit_values(cls, values_per_variable, variant: str = "custom") -> "Normalizer":
        lo = np.array([np.min(v) for v in values_per_variable], dtype=float)
        hi = np.array([np.max(v) for v in values_per_variable], dtype=float)
        return cls(variant, lo, hi)

    def transform(self, values: np.ndarray) -> np.ndarray:
        """Scale rows of ``values`` (one row per variable) into [0, 1]."""
        values = np.asarray(values, dtype=float)
        span = self.var_max - self.var_min
        safe = np.where(span > 0, span, 1.0)
        scaled = (values - self.var_min[:, None]) / safe[:, None]
        scaled = np.where((span > 0)[:, None], scaled, 0.0)
        return np.clip(scaled, 0.0, 1.0)

    def apply(self, raw: InputTensor) -> InputTensor:
        if raw.normalized:
            raise ValueError(f"{raw.cell_id}: tensor already normalised")
        if raw.variant != self.variant:
            raise ValueError(f"normalizer fitted for {self.variant}, tensor is {raw.variant}")
        data = self.transform(raw.data)
        data[:, ~raw.mask] = 0.0
        return InputTensor(raw.variant, raw.cell_id, raw.n_cy, raw.n_ts, data, raw.mask.copy(),
                           self.var_min.copy(), self.var_max.copy())

    def to_dict(self) -> dict:
        return {"variant": self.variant, "var_min": self.var_min.tolist(),
                "var_max": self.var_max.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(d["variant"], np.asarray(d["var_min"], float), np.asarray(d["var_max"], float),
                   VARIANTS.get(d["variant"], ()))


def build_input(record: CellRecord, variant: str, n_cy: int, normalizer: Normalizer | None = None,
                config: PreprocessConfig | None = None) -> InputTensor:
    """Input matrix for one cell; normalised when a fitted ``normalizer`` is given."""
    raw = build_raw(record, variant, n_cy, config)
    return normalizer.apply(raw) if normalizer is not None else raw
