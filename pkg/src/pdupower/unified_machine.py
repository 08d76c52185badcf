"""Unified Machine model: one forest predicts any machine's power from its
hardware description and CPU usage; PDU power is the sum over its machines
plus the previous day's mean overhead."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, DomainError
from .fleet_sim import OVERHEAD_SETPOINT, Dataset, MachineSpec, PduSpec
from .forest import (
    EncodingMap,
    FeatureMatrix,
    ForestParams,
    RandomForest,
    fit_forest,
    one_hot_encode,
    predict_forest,
    stratified_sample,
)
from .preprocess import usable

log = logging.getLogger(__name__)

CATEGORICAL = ("config_code", "dedicated_label")
PRODUCTION_SAMPLES_PER_GROUP = 30000
DESK_SAMPLES_PER_GROUP = 3000


@dataclass(frozen=True)
class MachineTrainingSet:
    matrix: FeatureMatrix
    encoding: EncodingMap
    row_ids: np.ndarray
    group_sizes: Mapping[tuple[str, str], int]


@dataclass(frozen=True)
class PduPowerPrediction:
    it_power: np.ndarray | float
    overhead: float
    total: np.ndarray | float
    per_machine: Mapping[str, np.ndarray | float]


def _columns(specs: Sequence[MachineSpec], idx: np.ndarray, cpu: np.ndarray) -> dict:
    codes = np.array([m.config_code for m in specs])
    labels = np.array([m.dedicated_label for m in specs])
    idle = np.array([m.idle_power for m in specs])
    maxp = np.array([m.max_power for m in specs])
    cap = np.array([m.cpu_capacity for m in specs])
    return {
        "config_code": codes[idx],
        "idle_power": idle[idx],
        "max_power": maxp[idx],
        "dedicated_label": labels[idx],
        "cpu_usage": cpu,
        "cpu_utilization": np.clip(cpu / cap[idx], 0.0, 1.0),
    }


def machine_features(
    specs: Sequence[MachineSpec], idx, cpu, encoding: EncodingMap | None = None, target=None
) -> tuple[FeatureMatrix, EncodingMap]:
    """Feature rows for machines ``specs[idx]`` at CPU usage ``cpu`` (cores)."""
    idx = np.asarray(idx, dtype=np.int64)
    cpu = np.asarray(cpu, dtype=np.float64)
    return one_hot_encode(_columns(specs, idx, cpu), CATEGORICAL, encoding, target)


def build_machine_training_set(
    dataset: Dataset,
    week_start: int,
    samples_per_group: int = DESK_SAMPLES_PER_GROUP,
    seed: int = 0,
    pdu_ids: Sequence[str] | None = None,
    n_days: int = 7,
) -> MachineTrainingSet:
    """Stratified per-(config_code, dedicated_label) sample of one week.

    Within each group, rows are drawn evenly across ten utilization
    buckets. Only usable samples of machines on ``pdu_ids`` (default all)
    are eligible. Row ids are ``machine_index * n_periods + period``.
    """
    if not dataset.has_machines:
        raise ContractError("dataset has no machine-level telemetry")
    specs = dataset.fleet.machines
    allowed = set(dataset.pdu_ids if pdu_ids is None else pdu_ids)
    sl = dataset.days_slice(week_start, week_start + n_days - 1)
    keep = []
    row = 0
    for p in dataset.fleet.pdus:
        if p.pdu_id in allowed:
            keep.extend(range(row, row + len(p.machines)))
        row += len(p.machines)
    keep = np.asarray(keep, dtype=np.int64)

    cpu = dataset.machine_cpu[keep, sl]
    power = dataset.machine_power[keep, sl]
    ok = usable(dataset.machine_flags[keep, sl]) & ~np.isnan(cpu) & ~np.isnan(power)
    groups: dict[tuple[str, str], list[int]] = {}
    for j, k in enumerate(keep):
        groups.setdefault((specs[k].config_code, specs[k].dedicated_label), []).append(j)

    parts_m, parts_t = [], []
    sizes = {}
    for g, key in enumerate(sorted(groups)):
        rows = np.asarray(groups[key])
        r_idx, t_idx = np.nonzero(ok[rows])
        if len(r_idx) == 0:
            log.warning("group %s has no usable samples; skipped", key)
            continue
        m_idx = rows[r_idx]
        util = np.clip(cpu[m_idx, t_idx] / np.array([specs[keep[j]].cpu_capacity for j in m_idx]), 0, 1)
        pick = stratified_sample(util, samples_per_group, seed=[seed, g])
        parts_m.append(m_idx[pick])
        parts_t.append(t_idx[pick])
        sizes[key] = len(pick)
    if not parts_m:
        raise ContractError("no usable machine samples in the selected week")
    mj = np.concatenate(parts_m)
    tj = np.concatenate(parts_t)
    machine_index = keep[mj]
    matrix, encoding = machine_features(specs, machine_index, cpu[mj, tj], target=power[mj, tj])
    row_ids = machine_index * dataset.n_periods + (sl.start + tj)
    return MachineTrainingSet(matrix, encoding, row_ids, sizes)


def train_unified_machine(
    training: MachineTrainingSet, params: ForestParams = ForestParams(), n_jobs: int = 1
) -> RandomForest:
    return fit_forest(training.matrix, params, training.encoding, training.row_ids, n_jobs)


def baseline_linear_machine(spec: MachineSpec, utilization):
    """Straight line from idle power at zero utilization to max power at full."""
    u = np.asarray(utilization, dtype=np.float64)
    if np.any((u < 0) | (u > 1)) or np.isnan(u).any():
        raise DomainError("utilization must lie in [0, 1]")
    out = spec.idle_power + (spec.max_power - spec.idle_power) * u
    return float(out) if out.ndim == 0 else out


def predict_machines(model: RandomForest, specs: Sequence[MachineSpec], cpu, n_jobs: int = 1) -> np.ndarray:
    """Power of each machine at each time. ``cpu`` has shape (n_machines, T)."""
    cpu = np.atleast_2d(np.asarray(cpu, dtype=np.float64))
    n, T = cpu.shape
    idx = np.repeat(np.arange(n), T)
    X, _ = machine_features(specs, idx, cpu.ravel(), model.encoding)
    return predict_forest(model, X, n_jobs).reshape(n, T)


def estimate_overhead(pdu: PduSpec, dataset: Dataset, pdu_index: int, day: int) -> float:
    """Mean of recorded PDU power minus summed machine power over ``day - 1``.

    Floored at zero. Falls back to the overhead set-point of P^N + P^C when
    that day is absent or has no usable sample.
    """
    fallback = OVERHEAD_SETPOINT * pdu.overhead_capacity
    try:
        sl = dataset.day_slice(day - 1)
    except IndexError:
        log.warning("%s: no previous-day data for day %d; using fallback overhead", pdu.pdu_id, day)
        return fallback
    msl = dataset.machine_slice(pdu_index)
    it = np.zeros(sl.stop - sl.start)
    for row in dataset.machine_power[msl, sl]:
        it += row
    diff = dataset.pdu_power[pdu_index, sl] - it
    ok = usable(dataset.pdu_flags[pdu_index, sl]) & ~np.isnan(diff)
    if not ok.any():
        log.warning("%s: no usable previous-day sample; using fallback overhead", pdu.pdu_id)
        return fallback
    return max(0.0, float(diff[ok].mean()))


def predict_pdu_power_um(
    model: RandomForest,
    pdu: PduSpec,
    machine_cpu: Mapping[str, float | np.ndarray],
    overhead: float,
    n_jobs: int = 1,
) -> PduPowerPrediction:
    """Sum of per-machine predictions plus ``overhead``.

    ``machine_cpu`` maps every machine id of the PDU to a CPU usage (scalar
    or time series). Summation runs in machine-id order.
    """
    missing = [m.machine_id for m in pdu.machines if m.machine_id not in machine_cpu]
    if missing:
        raise ContractError(f"missing CPU usage for machines {missing}")
    if not pdu.machines:
        return PduPowerPrediction(0.0, overhead, overhead, {})
    specs = sorted(pdu.machines, key=lambda m: m.machine_id)
    cpu = [np.atleast_1d(np.asarray(machine_cpu[m.machine_id], dtype=np.float64)) for m in specs]
    scalar = all(np.ndim(machine_cpu[m.machine_id]) == 0 for m in specs)
    per = predict_machines(model, specs, np.vstack(cpu), n_jobs)
    it = np.zeros(per.shape[1])
    for row in per:
        it += row
    total = it + overhead
    breakdown = {m.machine_id: (float(p[0]) if scalar else p) for m, p in zip(specs, per)}
    if scalar:
        return PduPowerPrediction(float(it[0]), overhead, float(total[0]), breakdown)
    return PduPowerPrediction(it, overhead, total, breakdown)


def predict_pdu_day_um(model: RandomForest, dataset: Dataset, pdu_index: int, day: int, n_jobs: int = 1):
    """PDU power prediction over one day from recorded machine CPU."""
    pdu = dataset.fleet.pdus[pdu_index]
    sl = dataset.day_slice(day)
    msl = dataset.machine_slice(pdu_index)
    cpu = dataset.machine_cpu[msl, sl]
    usage = {m.machine_id: cpu[j] for j, m in enumerate(pdu.machines)}
    overhead = estimate_overhead(pdu, dataset, pdu_index, day)
    return predict_pdu_power_um(model, pdu, usage, overhead, n_jobs)
