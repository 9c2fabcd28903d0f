"""Charging-rate and knee-onset statistics per batch."""

from __future__ import annotations

import logging

import numpy as np

from ..train import target_of

log = logging.getLogger(__name__)


def average_crate(policies) -> float:
    """Mean over cells of each policy's average C-rate up to 80% SOC."""
    policies = list(policies)
    if not policies:
        raise ValueError("no policies given")
    return float(np.mean([p.average_crate() for p in policies]))


def batch_stats(records, labels, batches=(1, 2, 3)) -> list:
    """Rows ``{batch, n, knee_mean, knee_std, crate_mean}``; std is the population value.

    Batches without labelled cells are left out with a warning.
    """
    rows = []
    for b in batches:
        cells = [r for r in records if r.batch == b and r.cell_id in labels]
        if not cells:
            log.warning("batch %s has no labelled cells; omitted", b)
            continue
        knees = np.array([target_of(labels[r.cell_id]) for r in cells])
        rows.append({"batch": b, "n": len(cells), "knee_mean": float(knees.mean()),
                     "knee_std": float(knees.std()), "crate_mean": average_crate(r.policy for r in cells)})
    return rows
