"""Seeded synthetic cycling corpora with known knee-onset.

Each cell follows the three-batch protocol structure: two-step CC charge to
80% SOC, a batch-dependent rest, 1C top-up to 100%, 4C discharge and a final
rest. Per-cycle signals come from closed-form phase dynamics (open-circuit
voltage, ohmic drop, first-order polarisation and heating). Capacity fades
along an exact double Bacon-Watts curve whose breakpoints are stored in
``record.meta``.

Knee-onset depends on the average charge C-rate in every batch and, in the
long-rest batch 2, decreases with the rest length. Internal resistance grows
faster with longer rests. At zero current the polarisation voltage relaxes
towards a negative offset that scales with 1/c_ko (side reactions in
short-lived cells), so the rest segments carry the knee signal directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..knee import design_matrix
from .records import CellRecord, ChargingPolicy, CycleTrace

DISCHARGE_CRATE = 4.0
TOPUP_CRATE = 1.0


@dataclass(frozen=True)
class SyntheticSpec:
    n_cells: int = 40
    batch_mix: tuple = (0.4, 0.3, 0.3)
    n_traced: int = 100
    dt_min: float = 0.2
    nominal_capacity: float = 1.1
    gamma: float = 10.0
    knee_base: tuple = (650.0, 420.0, 720.0)
    crate_effect: float = 110.0    # cycles lost per extra C of average charge rate
    rest_effect: float = 100.0     # batch 2: cycles lost per extra minute of rest
    long_rest: tuple = (4.0, 6.0)  # batch 2 rest length range, minutes
    knee_range: tuple = (150.0, 1200.0)
    knee_noise: float = 15.0
    fade_noise: float = 0.002
    v_noise: float = 1e-3
    t_noise: float = 0.05
    spike_rate: float = 1e-3
    spike_size: float = 5.0
    relax_scale: float = 0.05      # rest relaxation offset in V for a cell with knee-onset at 600


def _ocv(soc):
    s = np.clip(soc, 0.0, 1.0)
    return 3.25 + 0.1 * (s - 0.5) - 0.9 * np.exp(-s / 0.04) + 0.1 * np.exp(-(1.0 - s) / 0.03)


def fade_alphas(slopes, c_ko: float, c_2nd: float, gamma: float, q_first: float, first: float = 1.0):
    """Coefficients of the double Bacon-Watts curve with the given regime slopes.

    ``slopes = (s0, s1, s2)`` are the asymptotic capacity slopes before the
    knee-onset, between the breakpoints and after the second one. The
    intercept is chosen so that Q(first) == q_first.
    """
    s0, s1, s2 = slopes
    a2 = (s1 - s0) / 2.0
    a3 = (s2 - s1) / 2.0
    a1 = s0 + a2 + a3
    row = design_matrix([first], c_ko, c_2nd, gamma)[0]
    a0 = q_first - row[1:] @ np.array([a1, a2, a3])
    return np.array([a0, a1, a2, a3])


def synthetic_fade(rng: np.random.Generator, c_ko: float, c_2nd: float, n_cycles: int,
                   q_first: float = 1.07, gamma: float = 10.0, noise: float = 0.002):
    """Noisy fade curve with a knee at ``c_ko``.

    Returns ``(cycles, noisy, clean, alphas)``. Regime slopes are drawn so
    the curve loses a few percent before the knee and accelerates after it.
    """
    tail = max(1.0, n_cycles - c_2nd)
    s0 = -rng.uniform(0.02, 0.04) / max(c_ko, 1.0)
    s1 = s0 - rng.uniform(0.05, 0.09) / max(c_2nd - c_ko, 1.0)
    s2 = s1 - rng.uniform(0.12, 0.20) / tail
    alphas = fade_alphas((s0, s1, s2), c_ko, c_2nd, gamma, q_first)
    cycles = np.arange(1, n_cycles + 1, dtype=float)
    clean = design_matrix(cycles, c_ko, c_2nd, gamma) @ alphas
    noisy = clean + rng.normal(0.0, noise, n_cycles) if noise > 0 else clean.copy()
    return cycles, noisy, clean, alphas


def _rests(batch: int, rest_len: float):
    """(after 80% charge, before discharge, after discharge) rest lengths in minutes."""
    if batch == 1:
        return 1.0, 0.0, 1.0 / 60.0
    if batch == 2:
        return rest_len, 0.0, rest_len
    return 5.0 / 60.0, 10.0 / 60.0, 5.0 / 60.0


@dataclass
class _CellParams:
    batch: int
    policy: ChargingPolicy
    rest_len: float
    c_ko: float
    c_2nd: float
    n_life: int
    r0: float
    r_growth: float
    rp: float
    tau_p: float
    t_amb: float
    heat: float
    relax: float = 0.0


def _draw_params(rng, spec: SyntheticSpec, batch: int) -> _CellParams:
    cr1 = round(rng.uniform(3.6, 7.0), 1)
    q_tr = float(rng.integers(10, 81))
    cr2 = round(rng.uniform(3.0, 6.0), 1)
    policy = ChargingPolicy(cr1, q_tr, cr2)
    rest_len = rng.uniform(*spec.long_rest) if batch == 2 else 0.0
    c_ko = spec.knee_base[batch - 1] - spec.crate_effect * (policy.average_crate() - 4.8)
    if batch == 2:
        c_ko -= spec.rest_effect * (rest_len - 5.0)
    c_ko += rng.normal(0.0, spec.knee_noise)
    c_ko = float(np.clip(c_ko, *spec.knee_range))
    c_2nd = c_ko + rng.uniform(100.0, 200.0)
    n_life = int(round(c_2nd + rng.uniform(100.0, 250.0)))
    rest_total = sum(_rests(batch, rest_len))
    return _CellParams(
        batch=batch, policy=policy, rest_len=rest_len, c_ko=c_ko, c_2nd=c_2nd,
        n_life=max(n_life, spec.n_traced),
        r0=rng.uniform(0.015, 0.02),
        # resistance rises faster for short-lived cells and with longer rests at high SOC
        r_growth=0.15 / c_ko * (1.0 + 0.1 * rest_total),
        rp=rng.uniform(0.008, 0.012),
        tau_p=rng.uniform(0.8, 1.2),
        t_amb=30.0 + rng.normal(0.0, 0.3),
        heat=rng.uniform(0.25, 0.35),
        relax=spec.relax_scale * 600.0 / c_ko,
    )


def _phases(p: _CellParams, q: float, q_nom: float):
    """List of (current in A, duration in min); current positive on charge."""
    pol = p.policy
    r1, r_pre, r2 = _rests(p.batch, p.rest_len)
    out = []
    frac1 = pol.q_tr / 100.0
    frac2 = (80.0 - pol.q_tr) / 100.0
    out.append((pol.cr_1st * q_nom, frac1 * q / (pol.cr_1st * q_nom) * 60.0))
    if frac2 > 0:
        out.append((pol.cr_2nd * q_nom, frac2 * q / (pol.cr_2nd * q_nom) * 60.0))
    out.append((0.0, r1))
    out.append((TOPUP_CRATE * q_nom, 0.2 * q / (TOPUP_CRATE * q_nom) * 60.0))
    if r_pre > 0:
        out.append((0.0, r_pre))
    out.append((-DISCHARGE_CRATE * q_nom, q / (DISCHARGE_CRATE * q_nom) * 60.0))
    out.append((0.0, r2))
    return [(i, d) for i, d in out if d > 0]


def _phase(p: _CellParams, r0: float, q: float, state: tuple, current: float, tau: np.ndarray):
    """Signals at local times ``tau`` of a constant-current phase entered in ``state``."""
    soc, vp, temp, qc, qd = state
    ah = current * tau / 60.0
    target = current * p.rp if current != 0 else -p.relax
    vp_t = target + (vp - target) * np.exp(-tau / p.tau_p)
    t_inf = p.t_amb + p.heat * current ** 2
    temp_t = t_inf + (temp - t_inf) * np.exp(-tau / 3.0)
    v = _ocv(soc + ah / q) + current * r0 + vp_t
    return v, temp_t, qc + np.maximum(ah, 0.0), qd + np.maximum(-ah, 0.0), vp_t, soc + ah / q


def _simulate_cycle(p: _CellParams, cycle: int, q: float, spec: SyntheticSpec, rng) -> CycleTrace:
    r0 = p.r0 * (1.0 + p.r_growth * (cycle - 1))
    state = (0.0, 0.0, p.t_amb, 0.0, 0.0)
    t0 = 0.0
    cols = {k: [] for k in ("t", "V", "I", "T", "Qc", "Qd")}
    for current, dur in _phases(p, q, spec.nominal_capacity):
        tau = np.arange(0.0, dur - 1e-9, spec.dt_min)
        v, temp, qc, qd, _, _ = _phase(p, r0, q, state, current, tau)
        for key, val in zip(("t", "V", "I", "T", "Qc", "Qd"),
                            (t0 + tau, v, np.full(tau.size, current), temp, qc, qd)):
            cols[key].append(val)
        v, temp, qc, qd, vp, soc = _phase(p, r0, q, state, current, np.array([dur]))
        state = (soc[0], vp[0], temp[0], qc[0], qd[0])
        end = (t0 + dur, v[0], current, temp[0], qc[0], qd[0])
        t0 += dur
    for key, val in zip(("t", "V", "I", "T", "Qc", "Qd"), end):
        cols[key].append(np.array([val]))
    c = {k: np.concatenate(v) for k, v in cols.items()}
    c["V"] += rng.normal(0.0, spec.v_noise, c["t"].size)
    c["T"] += rng.normal(0.0, spec.t_noise, c["t"].size)
    if spec.spike_rate > 0:
        c["T"][rng.random(c["t"].size) < spec.spike_rate] += spec.spike_size
    return CycleTrace(cycle, c["t"], c["V"], c["I"], c["T"], c["Qc"], c["Qd"], q_end=float(q))


def _batch_counts(n: int, mix) -> list[int]:
    mix = np.asarray(mix, dtype=float)
    if mix.shape != (3,) or np.any(mix < 0) or mix.sum() <= 0:
        raise ValueError("batch_mix must be three non-negative weights")
    counts = np.floor(n * mix / mix.sum()).astype(int)
    for k in np.argsort(-(n * mix / mix.sum() - counts), kind="stable")[: n - counts.sum()]:
        counts[k] += 1
    return counts.tolist()


def generate_synthetic(spec: SyntheticSpec | None = None, seed: int = 0) -> list[CellRecord]:
    """Build ``spec.n_cells`` cells; identical ``(spec, seed)`` gives identical records.

    Cells are named ``b<batch>c<k>``. The first ``spec.n_traced`` cycles
    carry full traces; the fade summary covers the whole life.
    ``record.meta`` holds the true ``c_ko``, ``c_2nd``, fade coefficients and
    rest length.
    """
    spec = spec or SyntheticSpec()
    root = np.random.SeedSequence(seed)
    param_ss, *cell_ss = root.spawn(spec.n_cells + 1)
    prng = np.random.default_rng(param_ss)
    records = []
    k = 0
    for batch, count in zip((1, 2, 3), _batch_counts(spec.n_cells, spec.batch_mix)):
        for j in range(count):
            p = _draw_params(prng, spec, batch)
            rng = np.random.default_rng(cell_ss[k])
            k += 1
            q_first = spec.nominal_capacity * rng.uniform(0.97, 1.0)
            cycles, noisy, _, alphas = synthetic_fade(rng, p.c_ko, p.c_2nd, p.n_life, q_first,
                                                      spec.gamma, spec.fade_noise)
            traces = [_simulate_cycle(p, c, noisy[c - 1], spec, rng) for c in range(1, spec.n_traced + 1)]
            rec = CellRecord(f"b{batch}c{j}", batch, p.policy, traces, cycles, noisy)
            rec.meta.update(c_ko=p.c_ko, c_2nd=p.c_2nd, alphas=alphas.tolist(), rest_min=p.rest_len,
                            gamma=spec.gamma)
            records.append(rec)
    return records
