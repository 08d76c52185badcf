"""Unified PDU model: a single forest mapping PDU-level hardware composition
and per-family CPU usage directly to PDU power."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError
from .fleet_sim import ARCHITECTURES, PLATFORM_FAMILIES, Dataset, PduSpec
from .forest import (
    EncodingMap,
    FeatureMatrix,
    ForestParams,
    RandomForest,
    fit_forest,
    one_hot_encode,
    predict_forest,
)
from .preprocess import usable

DESK_MAX_ROWS = 50000

# fixed width: every family and architecture gets a column even when absent
ENCODING = EncodingMap({"architecture_type": ARCHITECTURES})


@dataclass(frozen=True)
class PduTrainingSet:
    matrix: FeatureMatrix
    row_ids: np.ndarray


def family_cpu_usage(dataset: Dataset, pdu_index: int, sl: slice) -> np.ndarray:
    """(10, T) summed machine CPU per platform family; zero rows for absent families."""
    pdu = dataset.fleet.pdus[pdu_index]
    msl = dataset.machine_slice(pdu_index)
    cpu = dataset.machine_cpu[msl, sl]
    out = np.zeros((len(PLATFORM_FAMILIES), cpu.shape[1]))
    pos = {f: i for i, f in enumerate(PLATFORM_FAMILIES)}
    for j, m in enumerate(pdu.machines):
        out[pos[m.platform_family]] += cpu[j]
    return out


def pdu_features(pdu: PduSpec, family_cpu: np.ndarray, target=None) -> FeatureMatrix:
    """Feature rows for one PDU at each column of ``family_cpu`` (10, T)."""
    family_cpu = np.asarray(family_cpu, dtype=np.float64).reshape(len(PLATFORM_FAMILIES), -1)
    T = family_cpu.shape[1]
    cols: dict = {
        "total_idle_power": np.full(T, pdu.idle_power),
        "total_max_power": np.full(T, pdu.max_power),
    }
    for f in PLATFORM_FAMILIES:
        cols[f"count_{f}"] = np.full(T, float(pdu.family_counts.get(f, 0)))
    for i, f in enumerate(PLATFORM_FAMILIES):
        cols[f"cpu_{f}"] = family_cpu[i]
    cols["network_max_power"] = np.full(T, pdu.network_max_power)
    cols["cooling_max_power"] = np.full(T, pdu.cooling_max_power)
    cols["architecture_type"] = [pdu.architecture_type] * T
    X, _ = one_hot_encode(cols, ("architecture_type",), ENCODING, target)
    return X


def build_pdu_training_set(
    dataset: Dataset,
    week_start: int,
    max_rows: int = DESK_MAX_ROWS,
    seed: int = 0,
    pdu_ids: Sequence[str] | None = None,
    n_days: int = 7,
) -> PduTrainingSet:
    """One row per usable (PDU, period) of the week, uniformly subsampled to ``max_rows``."""
    if not dataset.has_machines:
        raise ContractError("dataset has no machine-level telemetry")
    allowed = set(dataset.pdu_ids if pdu_ids is None else pdu_ids)
    sl = dataset.days_slice(week_start, week_start + n_days - 1)
    blocks, targets, ids = [], [], []
    for i, pdu in enumerate(dataset.fleet.pdus):
        if pdu.pdu_id not in allowed:
            continue
        fam = family_cpu_usage(dataset, i, sl)
        power = dataset.pdu_power[i, sl]
        ok = usable(dataset.pdu_flags[i, sl]) & ~np.isnan(power) & ~np.isnan(fam).any(axis=0)
        X = pdu_features(pdu, fam[:, ok])
        blocks.append(X.X)
        targets.append(power[ok])
        ids.append(i * dataset.n_periods + sl.start + np.flatnonzero(ok))
    if not blocks:
        raise ContractError("no PDUs selected")
    X = np.vstack(blocks)
    y = np.concatenate(targets)
    row_ids = np.concatenate(ids)
    if len(y) > max_rows:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(y), size=max_rows, replace=False))
        X, y, row_ids = X[pick], y[pick], row_ids[pick]
    columns = pdu_features(dataset.fleet.pdus[0], np.zeros((len(PLATFORM_FAMILIES), 0))).columns
    return PduTrainingSet(FeatureMatrix(X, columns, y), row_ids)


def train_unified_pdu(
    training: PduTrainingSet, params: ForestParams = ForestParams(), n_jobs: int = 1
) -> RandomForest:
    return fit_forest(training.matrix, params, ENCODING, training.row_ids, n_jobs)


def predict_pdu_power_up(model: RandomForest, features: FeatureMatrix, n_jobs: int = 1) -> np.ndarray:
    return predict_forest(model, features, n_jobs)


def predict_pdu_day_up(model: RandomForest, dataset: Dataset, pdu_index: int, day: int, n_jobs: int = 1):
    sl = dataset.day_slice(day)
    fam = family_cpu_usage(dataset, pdu_index, sl)
    return predict_pdu_power_up(model, pdu_features(dataset.fleet.pdus[pdu_index], fam), n_jobs)
