"""Cell, cycle and charging-policy records."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np


class IngestError(ValueError):
    """Raw data violates the record contract."""


SERIES = ("t", "V", "I", "T", "Qc", "Qd")

_POLICY_RE = re.compile(
    r"^\s*(?P<c1>\d+(?:\.\d+)?)C?\s*\(\s*(?P<q>\d+(?:\.\d+)?)\s*%\s*\)\s*-\s*(?P<c2>\d+(?:\.\d+)?)\s*C?\s*$",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class ChargingPolicy:
    """Two-step constant-current policy up to 80% SOC, ``C1(Q%)-C2``."""

    cr_1st: float
    q_tr: float
    cr_2nd: float

    def __post_init__(self):
        if not (self.cr_1st > 0 and self.cr_2nd > 0):
            raise IngestError(f"C-rates must be positive: {self}")
        if not (0 < self.q_tr <= 80):
            raise IngestError(f"transition SOC must lie in (0, 80]: {self}")

    @classmethod
    def parse(cls, text: str) -> "ChargingPolicy":
        m = _POLICY_RE.match(text or "")
        if m is None:
            raise IngestError(f"unrecognised charging policy {text!r}")
        return cls(float(m["c1"]), float(m["q"]), float(m["c2"]))

    def average_crate(self) -> float:
        """Mean C-rate from 0 to 80% SOC."""
        return self.cr_1st * self.q_tr / 80.0 + self.cr_2nd * (80.0 - self.q_tr) / 80.0

    def __str__(self) -> str:
        return f"{self.cr_1st:g}C({self.q_tr:g}%)-{self.cr_2nd:g}C"


@dataclass
class CycleTrace:
    """One cycle's raw series; ``t`` in minutes from cycle start, current positive on charge."""

    cycle: int
    t: np.ndarray
    V: np.ndarray
    I: np.ndarray  # noqa: E741
    T: np.ndarray
    Qc: np.ndarray
    Qd: np.ndarray
    q_end: float | None = None

    def __post_init__(self):
        for name in SERIES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = len(self.t)
        if n < 2:
            raise IngestError(f"cycle {self.cycle}: need at least 2 samples")
        for name in SERIES[1:]:
            if len(getattr(self, name)) != n:
                raise IngestError(f"cycle {self.cycle}: series {name} has length "
                                  f"{len(getattr(self, name))}, expected {n}")
        bad = np.flatnonzero(np.diff(self.t) <= 0)
        if bad.size:
            raise IngestError(f"cycle {self.cycle}: time not strictly increasing at sample {bad[0] + 1}")
        if self.q_end is None:
            self.q_end = float(self.Qd.max())

    def __len__(self):
        return len(self.t)


@dataclass
class CellRecord:
    """A cell: metadata, traced cycles (a prefix) and the full per-cycle capacity summary.

    ``summary_cycles``/``summary_capacity`` hold the discharge capacity of
    every recorded cycle, including cycles with no stored trace. ``meta``
    holds free-form annotations (generator ground truth); it is not persisted.
    """

    cell_id: str
    batch: int
    policy: ChargingPolicy
    cycles: list = field(default_factory=list)
    summary_cycles: np.ndarray | None = None
    summary_capacity: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for k, c in enumerate(self.cycles):
            if c.cycle != k + 1:
                raise IngestError(f"{self.cell_id}: traced cycles must start at 1 without gaps "
                                  f"(position {k} holds cycle {c.cycle})")
        if self.summary_cycles is not None:
            self.summary_cycles = np.asarray(self.summary_cycles, dtype=np.float64)
            self.summary_capacity = np.asarray(self.summary_capacity, dtype=np.float64)

    @property
    def n_cycles(self) -> int:
        return len(self.cycles)

    def fade_curve(self) -> tuple[np.ndarray, np.ndarray]:
        """(cycle, discharge capacity) over all recorded cycles."""
        if self.summary_cycles is not None and len(self.summary_cycles):
            return self.summary_cycles, self.summary_capacity
        cyc = np.array([c.cycle for c in self.cycles], dtype=float)
        cap = np.array([c.q_end for c in self.cycles], dtype=float)
        return cyc, cap
