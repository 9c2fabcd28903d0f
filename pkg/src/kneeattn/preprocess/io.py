"""Readers and writers for the ``cells-csv`` and ``cells-json`` corpus formats.

cells-csv has one row per sample with header
``cell_id,batch,policy,cycle,t_min,V,I,T,Qc,Qd`` and an optional ``Qend``
column (per-cycle discharge capacity). Rows whose ``t_min`` is empty are
summary rows: they carry only ``cycle`` and ``Qend`` for cycles without a
stored trace.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .records import CellRecord, ChargingPolicy, CycleTrace, IngestError

log = logging.getLogger(__name__)

CSV_COLUMNS = ["cell_id", "batch", "policy", "cycle", "t_min", "V", "I", "T", "Qc", "Qd"]
_SAMPLE_COLS = ["t_min", "V", "I", "T", "Qc", "Qd"]
_TRACE_KEYS = {"t_min": "t", "V": "V", "I": "I", "T": "T", "Qc": "Qc", "Qd": "Qd"}


def _shortest(v) -> str:
    """Shortest text that parses back to the same double."""
    return repr(float(v))


def load_corpus(path, format: str | None = None) -> list[CellRecord]:  # noqa: A002
    """Load and validate a corpus; ``format`` is inferred from the suffix when omitted."""
    path = Path(path)
    if format is None:
        format = "cells-json" if path.suffix.lower() == ".json" else "cells-csv"
    if format == "cells-csv":
        return _load_csv(path)
    if format == "cells-json":
        return _load_json(path)
    raise IngestError(f"unknown corpus format {format!r}")


def _load_csv(path: Path) -> list[CellRecord]:
    try:
        df = pd.read_csv(path, dtype={"cell_id": str, "policy": str}, keep_default_na=True,
                         float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    return frame_to_records(df)


def frame_to_records(df: pd.DataFrame) -> list[CellRecord]:
    for col in CSV_COLUMNS:
        if col not in df.columns:
            raise IngestError(f"missing column {col}")
    df = df.copy()
    df["_row"] = np.arange(len(df)) + 2  # 1-based file line, header is line 1
    has_qend = "Qend" in df.columns
    numeric = ["batch", "cycle"] + _SAMPLE_COLS + (["Qend"] if has_qend else [])
    for col in numeric:
        raw = df[col]
        conv = pd.to_numeric(raw, errors="coerce")
        bad = conv.isna() & raw.notna()
        if bad.any():
            r = df.loc[bad].iloc[0]
            raise IngestError(f"cell {r['cell_id']} cycle {r['cycle']}: non-numeric {col} "
                              f"value {raw[bad].iloc[0]!r} (line {r['_row']})")
        df[col] = conv

    records = []
    for cell_id, g in df.groupby("cell_id", sort=False):
        batches = g["batch"].dropna().unique()
        policies = g["policy"].dropna().unique()
        if len(batches) != 1 or len(policies) != 1:
            raise IngestError(f"cell {cell_id}: batch/policy must be constant per cell")
        policy = ChargingPolicy.parse(policies[0])
        summary_mask = g["t_min"].isna()
        samples = g[~summary_mask]
        missing = samples[_SAMPLE_COLS[1:]].isna().any(axis=1)
        if missing.any():
            r = samples[missing].iloc[0]
            col = next(c for c in _SAMPLE_COLS[1:] if pd.isna(r[c]))
            raise IngestError(f"cell {cell_id} cycle {int(r['cycle'])}: missing {col} (line {r['_row']})")
        cycles = []
        q_summary = {}
        for cyc, cg in samples.groupby("cycle", sort=True):
            q_end = None
            if has_qend and cg["Qend"].notna().any():
                q_end = float(cg["Qend"].dropna().iloc[0])
            try:
                trace = CycleTrace(int(cyc), *(cg[c].to_numpy() for c in _SAMPLE_COLS), q_end=q_end)
            except IngestError as exc:
                raise IngestError(f"cell {cell_id}: {exc}") from None
            cycles.append(trace)
            q_summary[int(cyc)] = trace.q_end
        for _, r in g[summary_mask].iterrows():
            if not has_qend or pd.isna(r["Qend"]):
                raise IngestError(f"cell {cell_id} cycle {r['cycle']}: summary row without Qend (line {r['_row']})")
            q_summary.setdefault(int(r["cycle"]), float(r["Qend"]))
        try:
            rec = CellRecord(str(cell_id), int(batches[0]), policy, cycles)
        except IngestError as exc:
            raise IngestError(str(exc)) from None
        if summary_mask.any() or has_qend:
            keys = sorted(q_summary)
            rec.summary_cycles = np.array(keys, dtype=float)
            rec.summary_capacity = np.array([q_summary[k] for k in keys])
        records.append(rec)
    return records


def _load_json(path: Path) -> list[CellRecord]:
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    records = []
    for cell in doc.get("cells", []):
        cid = cell.get("cell_id", "?")
        cycles = []
        for c in cell.get("cycles", []):
            for key in _SAMPLE_COLS:
                if key not in c:
                    raise IngestError(f"missing column {key} (cell {cid} cycle {c.get('cycle')})")
            try:
                cycles.append(CycleTrace(int(c["cycle"]), *(c[k] for k in _SAMPLE_COLS), q_end=c.get("Qend")))
            except IngestError as exc:
                raise IngestError(f"cell {cid}: {exc}") from None
        rec = CellRecord(cid, int(cell["batch"]), ChargingPolicy.parse(cell["policy"]), cycles)
        summary = cell.get("summary")
        if summary:
            rec.summary_cycles = np.asarray(summary["cycle"], dtype=float)
            rec.summary_capacity = np.asarray(summary["Qend"], dtype=float)
        records.append(rec)
    return records


def records_to_frame(records) -> pd.DataFrame:
    parts = []
    for rec in records:
        traced = set()
        for c in rec.cycles:
            n = len(c)
            traced.add(c.cycle)
            parts.append(pd.DataFrame({
                "cell_id": rec.cell_id, "batch": rec.batch, "policy": str(rec.policy),
                "cycle": c.cycle, "t_min": c.t, "V": c.V, "I": c.I, "T": c.T,
                "Qc": c.Qc, "Qd": c.Qd, "Qend": np.full(n, c.q_end),
            }))
        if rec.summary_cycles is not None:
            extra = [(int(k), q) for k, q in zip(rec.summary_cycles, rec.summary_capacity)
                     if int(k) not in traced]
            if extra:
                cyc, q = zip(*extra)
                parts.append(pd.DataFrame({
                    "cell_id": rec.cell_id, "batch": rec.batch, "policy": str(rec.policy),
                    "cycle": np.array(cyc), "t_min": np.nan, "V": np.nan, "I": np.nan, "T": np.nan,
                    "Qc": np.nan, "Qd": np.nan, "Qend": np.array(q),
                }))
    if not parts:
        return pd.DataFrame(columns=CSV_COLUMNS + ["Qend"])
    return pd.concat(parts, ignore_index=True)


def save_corpus(records, path, format: str | None = None) -> Path:  # noqa: A002
    """Write records; output is byte-identical for identical input."""
    path = Path(path)
    if format is None:
        format = "cells-json" if path.suffix.lower() == ".json" else "cells-csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    if format == "cells-csv":
        records_to_frame(records).to_csv(path, index=False, lineterminator="\n", float_format=_shortest)
    elif format == "cells-json":
        doc = {"format": "cells-json", "version": 1, "cells": []}
        for rec in records:
            cell = {"cell_id": rec.cell_id, "batch": rec.batch, "policy": str(rec.policy), "cycles": [
                {"cycle": c.cycle, "t_min": c.t.tolist(), "V": c.V.tolist(), "I": c.I.tolist(),
                 "T": c.T.tolist(), "Qc": c.Qc.tolist(), "Qd": c.Qd.tolist(), "Qend": c.q_end}
                for c in rec.cycles]}
            if rec.summary_cycles is not None:
                cell["summary"] = {"cycle": rec.summary_cycles.tolist(),
                                   "Qend": rec.summary_capacity.tolist()}
            doc["cells"].append(cell)
        path.write_text(json.dumps(doc))
    else:
        raise IngestError(f"unknown corpus format {format!r}")
    return path


# ---------------------------------------------------------------------------
# public-dataset dump conversion
# ---------------------------------------------------------------------------

#: Column names of the per-cell CSV dump of the public dataset's structures.
DUMP_COLUMNS = {"cell": "cell_id", "policy": "policy", "cycle": "cycle", "t": "t_min",
                "V": "V", "I": "I", "T": "T", "Qc": "Qc", "Qd": "Qd"}
DUMP_OPTIONAL = {"QD": "Qend", "batch": "batch"}


def convert_dump(src, dst) -> int:
    """Map a public-dataset CSV dump to cells-csv; returns the number of rows written.

    The dump has columns ``cell,policy,cycle,t,V,I,T,Qc,Qd`` (the dataset's
    per-cycle field names, ``t`` in minutes) plus optional ``QD`` (summary
    discharge capacity) and ``batch``. When ``batch`` is absent it is taken
    from the ``b<k>c<j>`` cell name.
    """
    try:
        df = pd.read_csv(src, dtype={"cell": str, "policy": str}, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as exc:
        raise IngestError(f"cannot read {src}: {exc}") from exc
    for col in DUMP_COLUMNS:
        if col not in df.columns:
            raise IngestError(f"missing column {col}")
    out = df.rename(columns={**DUMP_COLUMNS, **{k: v for k, v in DUMP_OPTIONAL.items() if k in df.columns}})
    if "batch" not in out.columns:
        batch = out["cell_id"].str.extract(r"^b(\d+)c", expand=False)
        if batch.isna().any():
            row = int(np.flatnonzero(batch.isna().to_numpy())[0]) + 2
            raise IngestError(f"cannot infer batch from cell name {out['cell_id'][row - 2]!r} (line {row})")
        out["batch"] = batch.astype(int)
    cols = CSV_COLUMNS + (["Qend"] if "Qend" in out.columns else [])
    out = out[cols]
    frame_to_records(out)  # validate before writing
    Path(dst).parent.mkdir(parents=True, exist_ok=True)
    out.to_csv(dst, index=False, lineterminator="\n", float_format=_shortest)
    return len(out)
