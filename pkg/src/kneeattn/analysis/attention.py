"""Attention-score export, key-cycle importance and input-size recommendation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..models import KneeModel, has_ca, has_ta
from ..preprocess.inputs import Normalizer
from ..train import prepare_inputs

log = logging.getLogger(__name__)

ALLOWED_SIZES = (30, 50, 80, 100)


class AttentionNotAvailable(ValueError):
    """The model does not produce the requested score type."""


@dataclass
class AttentionReport:
    """Per-batch means of temporal (cycle x timestep) and cyclic (query x key) scores."""

    ta: dict = field(default_factory=dict)        # batch -> (n_cy, n_ts)
    ca: dict = field(default_factory=dict)        # batch -> [ (n_cy, n_cy) per head ]
    counts: dict = field(default_factory=dict)    # batch -> number of cells averaged
    provenance: dict = field(default_factory=dict)

    def write(self, out_dir) -> list:
        """CSV and 8-bit PGM per matrix, plus a JSON manifest; returns written paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for b, m in sorted(self.ta.items()):
            stem = out / f"ta_batch{b}"
            paths += [write_matrix_csv(m, stem.with_suffix(".csv")), write_pgm(m, stem.with_suffix(".pgm"))]
        for b, heads in sorted(self.ca.items()):
            for j, m in enumerate(heads):
                stem = out / f"ca_batch{b}_head{j}"
                paths += [write_matrix_csv(m, stem.with_suffix(".csv")), write_pgm(m, stem.with_suffix(".pgm"))]
        manifest = out / "attention.json"
        manifest.write_text(json.dumps({"provenance": self.provenance,
                                        "counts": {str(k): v for k, v in self.counts.items()},
                                        "files": [p.name for p in paths]}, indent=1))
        return paths + [manifest]


def export_attention(model: KneeModel, records, cell_ids, kinds=("ta", "ca"),
                     out_dir=None, batch: int = 32) -> AttentionReport:
    """Run the model over ``cell_ids`` and average scores within each batch.

    Raises :class:`AttentionNotAvailable` when a requested kind is missing
    from the architecture.
    """
    arch = model.config.architecture
    kinds = tuple(kinds)
    if "ta" in kinds and not has_ta(arch):
        raise AttentionNotAvailable(f"temporal attention not available for {arch}")
    if "ca" in kinds and not has_ca(arch):
        raise AttentionNotAvailable(f"cyclic attention not available for {arch}")
    by_id = {r.cell_id: r for r in records}
    ids = [c for c in cell_ids if c in by_id]
    norm = Normalizer.from_dict(model.normalizer) if model.normalizer else None
    x, _ = prepare_inputs(records, ids, model.config.variant, model.config.n_cy, norm)
    sums_ta, sums_ca, counts = {}, {}, {}
    for start in range(0, len(ids), batch):
        res = model.forward(x[start:start + batch])
        for i, cid in enumerate(ids[start:start + batch]):
            b = by_id[cid].batch
            counts[b] = counts.get(b, 0) + 1
            if "ta" in kinds:
                sums_ta[b] = sums_ta.get(b, 0.0) + res.ta[i]
            if "ca" in kinds:
                heads = [m[i] for m in res.ca]
                sums_ca[b] = heads if b not in sums_ca else [s + h for s, h in zip(sums_ca[b], heads)]
    report = AttentionReport(
        ta={b: s / counts[b] for b, s in sums_ta.items()},
        ca={b: [s / counts[b] for s in hs] for b, hs in sums_ca.items()},
        counts=counts,
        provenance={"checkpoint": model.checkpoint_id(), "architecture": arch,
                    "variant": model.config.variant, "cells": list(ids)},
    )
    if out_dir is not None:
        report.write(out_dir)
    return report


def write_matrix_csv(m: np.ndarray, path) -> Path:
    path = Path(path)
    np.savetxt(path, np.atleast_2d(m), delimiter=",", fmt="%.17g")
    return path


def to_gray(m: np.ndarray) -> np.ndarray:
    """Linear map of ``m`` onto 0..255; a constant matrix maps to 0."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    lo, hi = m.min(), m.max()
    if hi <= lo:
        return np.zeros(m.shape, dtype=np.uint8)
    return np.rint((m - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(m: np.ndarray, path) -> Path:
    """Binary (P5) 8-bit grayscale image; rows are queries/cycles."""
    g = to_gray(m)
    path = Path(path)
    path.write_bytes(f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode() + g.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


# ---------------------------------------------------------------------------
# key cycles and input reduction
# ---------------------------------------------------------------------------

def key_importance(ca) -> np.ndarray:
    """Mean score received by each key over heads, batches and queries.

    ``ca`` is a list of square matrices, a list of per-head lists, a dict
    of those keyed by batch, or any nesting of these.
    """
    mats = []

    def collect(obj):
        if isinstance(obj, dict):
            obj = list(obj.values())
        arr = np.asarray(obj, dtype=float) if not isinstance(obj, (list, tuple)) else None
        if arr is not None and arr.ndim == 2:
            mats.append(arr)
        elif arr is not None and arr.ndim == 3:
            mats.extend(list(arr))
        else:
            for o in obj:
                collect(o)

    collect(ca)
    if not mats:
        raise ValueError("no attention matrices given")
    n = mats[0].shape[0]
    for m in mats:
        if m.shape != (n, n):
            raise ValueError(f"attention matrices must share a square shape, got {m.shape} and {(n, n)}")
    imp = np.mean([m.mean(axis=0) for m in mats], axis=0)
    return imp / imp.sum()


@dataclass
class ReductionPlan:
    importance: list
    threshold: float
    marked: list
    recommended: int
    allowed: tuple = ALLOWED_SIZES
    coverage: float = 0.90
    warning: str = ""

    def to_dict(self) -> dict:
        return {"importance": list(self.importance), "threshold": self.threshold, "marked": list(self.marked),
                "recommended": self.recommended, "allowed": list(self.allowed), "coverage": self.coverage,
                "warning": self.warning}

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path


def recommend_input_size(importance, allowed=ALLOWED_SIZES, coverage: float = 0.90,
                         rel_threshold: float = 0.5) -> ReductionPlan:
    """Smallest allowed cycle count that keeps every high-importance key and enough mass.

    Keys above ``rel_threshold * max`` are marked. A candidate size ``n``
    qualifies when it exceeds the last marked key index (0-based) and the
    first ``n`` keys hold at least ``coverage`` of the total importance.
    """
    imp = np.asarray(importance, dtype=float)
    if imp.ndim != 1 or imp.size == 0 or np.any(imp < 0):
        raise ValueError("importance must be a non-empty non-negative vector")
    total = imp.sum()
    if total <= 0:
        raise ValueError("importance has zero mass")
    p = imp / total
    threshold = rel_threshold * float(p.max())
    marked = np.flatnonzero(p > threshold)
    need = int(marked[-1]) + 1 if marked.size else 0
    cum = np.cumsum(p)
    for n in sorted(allowed):
        mass = float(cum[min(n, p.size) - 1])
        if n >= need and mass >= coverage - 1e-12:
            return ReductionPlan(p.tolist(), threshold, marked.tolist(), int(n), tuple(allowed), coverage)
    msg = f"no allowed size in {sorted(allowed)} qualifies; keeping 100"
    log.warning(msg)
    return ReductionPlan(p.tolist(), threshold, marked.tolist(), 100, tuple(allowed), coverage, msg)
