"""Accuracy metrics and the experiment protocols built on them."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ContractError, MissingModelError
from .fleet_sim import (
    PERIODS_PER_DAY,
    Dataset,
    DropWindow,
    LoadScenario,
    simulate_telemetry,
)
from .forest import ForestParams, RandomForest
from .perpdu import ModelStore, PerPduModel, daily_retrain, predict_per_pdu
from .preprocess import CleaningConfig, preprocess
from .unified_machine import (
    DESK_SAMPLES_PER_GROUP,
    build_machine_training_set,
    predict_pdu_day_um,
    train_unified_machine,
)
from .unified_pdu import (
    DESK_MAX_ROWS,
    build_pdu_training_set,
    family_cpu_usage,
    pdu_features,
    predict_pdu_day_up,
    train_unified_pdu,
)

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = tuple(np.round(np.arange(0.0, 20.25, 0.25), 2))


def mape(predictions, actuals, return_excluded: bool = False):
    """Mean absolute percent error over samples with a positive actual.

    Non-positive or missing actuals (and missing predictions) are excluded;
    with ``return_excluded`` the count of excluded samples is returned too.
    Returns NaN when no sample is usable.
    """
    p = np.asarray(predictions, dtype=np.float64)
    a = np.asarray(actuals, dtype=np.float64)
    if p.shape != a.shape:
        raise ContractError("predictions and actuals are misaligned")
    ok = (a > 0) & ~np.isnan(p)
    excluded = int(p.size - np.count_nonzero(ok))
    value = float(100.0 * np.mean(np.abs(p[ok] - a[ok]) / a[ok])) if ok.any() else math.nan
    return (value, excluded) if return_excluded else value


def avg_daily_mape(daily) -> float:
    """Mean of a week's daily MAPEs; missing (NaN) days are skipped with a warning."""
    v = np.asarray(daily, dtype=np.float64)
    ok = ~np.isnan(v)
    if np.count_nonzero(ok) < 7:
        warnings.warn(f"average over {np.count_nonzero(ok)} days, not 7", RuntimeWarning)
    if not ok.any():
        return math.nan
    return float(v[ok].mean())


@dataclass(frozen=True)
class CdfTable:
    thresholds: tuple[float, ...]
    fractions: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"thresholds": list(self.thresholds), "fractions": list(self.fractions)}

    def at(self, threshold: float) -> float:
        return self.fractions[self.thresholds.index(threshold)]


def mape_cdf(values, thresholds: Sequence[float] | None = None) -> CdfTable:
    """Fraction of PDUs whose metric is strictly below each threshold.

    NaN values are dropped. When thresholds are omitted the default grid is
    extended by one point above the maximum so the table ends at 1.
    """
    v = np.asarray(values, dtype=np.float64)
    v = v[~np.isnan(v)]
    if len(v) == 0:
        raise ContractError("CDF needs at least one value")
    if thresholds is None:
        grid = [t for t in DEFAULT_THRESHOLDS]
        top = float(np.nextafter(v.max(), np.inf))
        if top > grid[-1]:
            grid.append(top)
        thresholds = grid
    thr = tuple(float(t) for t in thresholds)
    if any(b < a for a, b in zip(thr, thr[1:])):
        raise ContractError("thresholds must be non-decreasing")
    s = np.sort(v)
    frac = tuple(float(np.searchsorted(s, t, side="left") / len(s)) for t in thr)
    return CdfTable(thr, frac)


def nearest_rank_percentile(values, q: float) -> float:
    """Smallest value with at least q% of the sample at or below it."""
    v = np.sort(np.asarray(values, dtype=np.float64)[~np.isnan(values)])
    if len(v) == 0:
        return math.nan
    rank = max(1, math.ceil(q / 100.0 * len(v)))
    return float(v[rank - 1])


def percentile_cdfs(daily_by_pdu: Mapping[str, Sequence[float]], thresholds=None):
    """CDFs across PDUs of each PDU's median and 99th-percentile daily MAPE."""
    p50 = [nearest_rank_percentile(np.asarray(v, dtype=float), 50) for v in daily_by_pdu.values()]
    p99 = [nearest_rank_percentile(np.asarray(v, dtype=float), 99) for v in daily_by_pdu.values()]
    return {"p50": mape_cdf(p50, thresholds), "p99": mape_cdf(p99, thresholds)}


def wupe(predictions, actuals, in_high, period_day, eval_day: int, lookback: int = 90) -> float:
    """Worst underprediction percent error for ``eval_day``.

    Max of 100*(actual - predicted)/actual over samples whose day lies in
    [eval_day - lookback, eval_day - 1] and whose CPU usage falls in the
    high regime of the model that produced the prediction. NaN when no such
    sample exists; negative when every such sample was overpredicted.
    """
    p = np.asarray(predictions, dtype=np.float64)
    a = np.asarray(actuals, dtype=np.float64)
    d = np.asarray(period_day)
    sel = (
        np.asarray(in_high, dtype=bool)
        & (d >= eval_day - lookback)
        & (d <= eval_day - 1)
        & (a > 0)
        & ~np.isnan(p)
    )
    if not sel.any():
        return math.nan
    return float(np.max(100.0 * (a[sel] - p[sel]) / a[sel]))


@dataclass
class MetricSeries:
    pdu_id: str
    metric: str
    values: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"pdu_id": self.pdu_id, "metric": self.metric, "values": {str(k): v for k, v in self.values.items()}}


@dataclass
class ExperimentReport:
    experiment_id: str
    summaries: dict
    config: dict

    def to_dict(self) -> dict:
        return {"experiment_id": self.experiment_id, "config": self.config, "summaries": self.summaries}


def check_disjoint(train_days: Sequence[int], test_days: Sequence[int]):
    overlap = sorted(set(train_days) & set(test_days))
    if overlap:
        raise ContractError(f"test days {overlap} overlap the training window")


# --- per-model next-day evaluation -------------------------------------------------


def per_pdu_predictions(raw: Dataset, clean: Dataset, days: Sequence[int], store: ModelStore | None = None):
    """Day-ahead Per-PDU predictions for each day in ``days``.

    The model for day d is trained on cleaned days d-7..d-1. Returns
    ``{pdu_id: (predictions, high_mask)}`` over the concatenated days, plus
    the store holding the models.
    """
    store = store if store is not None else ModelStore()
    preds = {pid: [] for pid in raw.pdu_ids}
    high = {pid: [] for pid in raw.pdu_ids}
    for d in days:
        check_disjoint(range(d - 7, d), [d])
        if d - 1 not in store:
            daily_retrain(clean, d - 1, store)
        models = store[d - 1]
        sl = raw.day_slice(d)
        for i, pid in enumerate(raw.pdu_ids):
            u = raw.pdu_cpu[i, sl]
            m = models.get(pid)
            if m is None:
                preds[pid].append(np.full(PERIODS_PER_DAY, np.nan))
                high[pid].append(np.zeros(PERIODS_PER_DAY, dtype=bool))
                continue
            uu = np.where(np.isnan(u), 0.0, u)
            p = predict_per_pdu(m, uu)
            p[np.isnan(u)] = np.nan
            preds[pid].append(p)
            high[pid].append((m.regime_index(uu) == 2) & ~np.isnan(u))
    out = {pid: (np.concatenate(preds[pid]), np.concatenate(high[pid])) for pid in raw.pdu_ids}
    return out, store


def daily_mapes(raw: Dataset, predictions: Mapping[str, np.ndarray], days: Sequence[int]) -> dict[str, MetricSeries]:
    out = {}
    for i, pid in enumerate(raw.pdu_ids):
        series = MetricSeries(pid, "mape")
        p = predictions[pid]
        for k, d in enumerate(days):
            a = raw.pdu_power[i, raw.day_slice(d)]
            series.values[d] = mape(p[k * PERIODS_PER_DAY:(k + 1) * PERIODS_PER_DAY], a)
        out[pid] = series
    return out


def forest_predictions(raw: Dataset, days: Sequence[int], um: RandomForest | None = None,
                       up: RandomForest | None = None, n_jobs: int = 1, history: Dataset | None = None):
    """Concatenated day predictions of the unified models for every PDU.

    Machine CPU is read from ``raw``; the Unified Machine overhead term comes
    from ``history`` (the cleaned dataset) when given.
    """
    res = {}
    if um is not None and history is not None:
        history = history.replace(machine_cpu=raw.machine_cpu)
    for name, model in (("unified_machine", um), ("unified_pdu", up)):
        if model is None:
            continue
        per = {}
        for i, pid in enumerate(raw.pdu_ids):
            chunks = []
            for d in days:
                if name == "unified_machine":
                    chunks.append(np.asarray(predict_pdu_day_um(model, raw if history is None else history, i, d, n_jobs).total))
                else:
                    chunks.append(predict_pdu_day_up(model, raw, i, d, n_jobs))
            per[pid] = np.concatenate(chunks)
        res[name] = per
    return res


def next_day_evaluation(
    raw: Dataset,
    clean: Dataset,
    test_days: Sequence[int],
    um: RandomForest | None = None,
    up: RandomForest | None = None,
    um_train_days: Sequence[int] = (),
    up_train_days: Sequence[int] = (),
    thresholds=None,
    n_jobs: int = 1,
) -> ExperimentReport:
    """Average daily MAPE per PDU over ``test_days`` and its CDF, per model."""
    check_disjoint(um_train_days, test_days)
    check_disjoint(up_train_days, test_days)
    pp, _ = per_pdu_predictions(raw, clean, test_days)
    preds = {"per_pdu": {pid: v[0] for pid, v in pp.items()}}
    preds.update(forest_predictions(raw, test_days, um, up, n_jobs, clean))
    summaries = {}
    for name, per in preds.items():
        daily = daily_mapes(raw, per, test_days)
        avg = {pid: avg_daily_mape(list(s.values.values())) for pid, s in daily.items()}
        vals = list(avg.values())
        summaries[name] = {
            "avg_daily_mape": avg,
            "daily_mape": {pid: s.to_dict()["values"] for pid, s in daily.items()},
            "cdf": mape_cdf(vals, thresholds).to_dict(),
            "fraction_below_5": float(np.mean(np.asarray(vals) < 5.0)),
            "fraction_below_10": float(np.mean(np.asarray(vals) < 10.0)),
        }
    return ExperimentReport(
        "next_day",
        summaries,
        {"test_days": list(test_days), "um_train_days": list(um_train_days), "up_train_days": list(up_train_days)},
    )


def wupe_evaluation(raw: Dataset, clean: Dataset, first_day: int, last_day: int, lookback: int = 90):
    """Per PDU: WUPE(d) for d in first_day+1 .. last_day+1 and its maximum.

    Predictions for days first_day..last_day come from daily retrained
    Per-PDU models; WUPE(d) looks back over the predicted days before d.
    """
    days = list(range(first_day, last_day + 1))
    pp, store = per_pdu_predictions(raw, clean, days)
    period_day = np.repeat(days, PERIODS_PER_DAY)
    out = {}
    for i, pid in enumerate(raw.pdu_ids):
        pred, high = pp[pid]
        actual = raw.pdu_power[i, raw.days_slice(first_day, last_day)]
        series = MetricSeries(pid, "wupe")
        for d in range(first_day + 1, last_day + 2):
            series.values[d] = wupe(pred, actual, high, period_day, d, lookback)
        out[pid] = series
    return out, pp


# --- experiments ---------------------------------------------------------------------


def _forest_config(params: ForestParams) -> dict:
    return {
        "n_trees": params.n_trees,
        "max_depth": params.max_depth,
        "min_samples_leaf": params.min_samples_leaf,
        "features_per_split": params.features_per_split,
        "bootstrap": params.bootstrap,
        "seed": params.seed,
    }


def extrapolation_distance(train_X: np.ndarray, test_X: np.ndarray, columns: Sequence[str]) -> float:
    """Largest distance of a family CPU feature outside its training range,
    relative to that range's upper end."""
    worst = 0.0
    for j, c in enumerate(columns):
        if not c.startswith("cpu_"):
            continue
        lo, hi = train_X[:, j].min(), train_X[:, j].max()
        if hi <= 0:
            continue
        below = np.maximum(0.0, lo - test_X[:, j]).max(initial=0.0)
        above = np.maximum(0.0, test_X[:, j] - hi).max(initial=0.0)
        worst = max(worst, float(max(below, above) / hi))
    return worst


def run_power_drop_experiment(
    fleet,
    scenario: LoadScenario,
    n_train_days: int = 7,
    noise_sigma: float = 0.02,
    seed: int = 0,
    params: ForestParams = ForestParams(),
    samples_per_group: int = DESK_SAMPLES_PER_GROUP,
    max_rows: int = DESK_MAX_ROWS,
    cleaning: CleaningConfig = CleaningConfig(),
    n_jobs: int = 1,
) -> ExperimentReport:
    """Train all three models on ``n_train_days`` days, then score them inside
    the drop window of the following day.

    The drop day is ``n_train_days``; ``scenario.drop_window.day`` is set to
    it. With no drop window the same periods of an ordinary day are scored.
    """
    drop_day = n_train_days
    window = scenario.drop_window or DropWindow(drop_day, tier_drop=(0.0,) * len(scenario.tier_shares))
    window = DropWindow(drop_day, window.start_period, window.end_period, window.tier_drop)
    scenario = LoadScenario(**{**scenario.__dict__, "drop_window": window})
    raw = simulate_telemetry(fleet, scenario, n_days=n_train_days + 1, noise_sigma=noise_sigma, seed=seed)
    clean, _ = preprocess(raw.replace(n_days=n_train_days, **_truncate(raw, n_train_days)), cleaning)
    train_days = list(range(n_train_days))
    check_disjoint(train_days, [drop_day])

    ts = build_machine_training_set(clean, 0, samples_per_group, seed, n_days=n_train_days)
    um = train_unified_machine(ts, params, n_jobs)
    pts = build_pdu_training_set(clean, 0, max_rows, seed, n_days=n_train_days)
    up = train_unified_pdu(pts, params, n_jobs)
    pp_models = daily_retrain(clean, drop_day - 1)

    # overhead and Per-PDU inputs come from the cleaned history, scoring from raw
    full = raw.replace(
        pdu_power=np.concatenate([clean.pdu_power, raw.pdu_power[:, -PERIODS_PER_DAY:]], axis=1),
        pdu_flags=np.concatenate([clean.pdu_flags, raw.pdu_flags[:, -PERIODS_PER_DAY:]], axis=1),
    )
    win = slice(window.start_period, window.end_period)
    per_pdu = {}
    for i, pdu in enumerate(fleet.pdus):
        sl = raw.day_slice(drop_day)
        actual = raw.pdu_power[i, sl][win]
        cpu = raw.pdu_cpu[i, sl][win]
        row = {}
        m: PerPduModel | None = pp_models.get(pdu.pdu_id)
        if m is None:
            row["per_pdu"] = math.nan
            row["per_pdu_flag"] = "untrained"
        else:
            row["per_pdu"] = mape(predict_per_pdu(m, cpu), actual)
            row["per_pdu_below_cpu_min"] = float(np.mean(cpu < m.cpu_min))
        row["unified_machine"] = mape(np.asarray(predict_pdu_day_um(um, full, i, drop_day, n_jobs).total)[win], actual)
        row["unified_pdu"] = mape(predict_pdu_day_up(up, raw, i, drop_day, n_jobs)[win], actual)
        test_X = pdu_features(pdu, family_cpu_usage(raw, i, sl)[:, win]).X
        row["unified_pdu_extrapolation"] = extrapolation_distance(pts.matrix.X, test_X, pts.matrix.columns)
        row["cpu_drop_fraction"] = float(1 - cpu.mean() / raw.pdu_cpu[i, raw.day_slice(drop_day - 1)][win].mean())
        per_pdu[pdu.pdu_id] = row

    clusters = {}
    for c in fleet.clusters:
        rows = [per_pdu[p] for p in c.pdu_ids]
        clusters[c.cluster_id] = {
            name: float(np.nanmean([r[name] for r in rows]))
            for name in ("per_pdu", "unified_machine", "unified_pdu")
        }
    return ExperimentReport(
        "power_drop",
        {"per_cluster": clusters, "per_pdu": per_pdu},
        {
            "drop_day": drop_day,
            "window": [window.start_period, window.end_period],
            "tier_drop": list(window.tier_drop),
            "tier_shares": list(scenario.tier_shares),
            "noise_sigma": noise_sigma,
            "seed": seed,
            "forest": _forest_config(params),
            "samples_per_group": samples_per_group,
        },
    )


def _truncate(ds: Dataset, n_days: int) -> dict:
    T = n_days * PERIODS_PER_DAY
    out = {}
    for name in ("pdu_cpu", "pdu_power", "pdu_it_power", "pdu_overhead", "pdu_flags",
                 "machine_cpu", "machine_power", "machine_true_power", "machine_flags"):
        arr = getattr(ds, name)
        out[name] = None if arr is None else arr[:, :T]
    return out


def choose_holdouts(fleet, n_holdout: int, seed: int = 0) -> list[str]:
    """Random PDUs to hold out, never emptying an architecture."""
    rng = np.random.default_rng([seed, 47])
    remaining = {}
    for p in fleet.pdus:
        remaining[p.architecture_type] = remaining.get(p.architecture_type, 0) + 1
    picked = []
    for k in rng.permutation(len(fleet.pdus)):
        if len(picked) == n_holdout:
            break
        p = fleet.pdus[k]
        if remaining[p.architecture_type] > 1:
            remaining[p.architecture_type] -= 1
            picked.append(p.pdu_id)
    if len(picked) < n_holdout:
        raise ConfigError(f"cannot hold out {n_holdout} PDUs and keep every architecture")
    return sorted(picked)


def run_holdout_experiment(
    raw: Dataset,
    n_holdout: int,
    seed: int = 0,
    holdout_ids: Sequence[str] | None = None,
    train_week: int = 0,
    test_week: int = 7,
    params: ForestParams = ForestParams(),
    samples_per_group: int = DESK_SAMPLES_PER_GROUP,
    cleaning: CleaningConfig = CleaningConfig(),
    thresholds=None,
    n_jobs: int = 1,
) -> ExperimentReport:
    """Retrain the Unified Machine model without the hold-out PDUs and score
    each hold-out over a test week outside the training week."""
    fleet = raw.fleet
    config = {"n_holdout": n_holdout, "seed": seed, "train_week": train_week,
              "test_week": test_week, "forest": _forest_config(params),
              "samples_per_group": samples_per_group}
    if n_holdout == 0 and not holdout_ids:
        return ExperimentReport("holdout", {"holdouts": [], "per_pdu": {}}, config)
    if n_holdout >= len(fleet.pdus):
        raise ConfigError("n_holdout must be smaller than the number of PDUs")
    if holdout_ids is None:
        holdout_ids = choose_holdouts(fleet, n_holdout, seed)
    holdout_ids = sorted(holdout_ids)
    kept = [p for p in fleet.pdus if p.pdu_id not in set(holdout_ids)]
    archs = {p.architecture_type for p in fleet.pdus}
    if {p.architecture_type for p in kept} != archs:
        raise ConfigError("hold-out set removes an entire power architecture")
    train_days = list(range(train_week, train_week + 7))
    test_days = list(range(test_week, test_week + 7))
    check_disjoint(train_days, test_days)

    clean, _ = preprocess(raw, cleaning)
    ts = build_machine_training_set(clean, train_week, samples_per_group, seed,
                                    pdu_ids=[p.pdu_id for p in kept])
    um = train_unified_machine(ts, params, n_jobs)
    per_pdu = {}
    for pid in holdout_ids:
        i = raw.pdu_index(pid)
        pred = np.concatenate([np.asarray(predict_pdu_day_um(um, clean, i, d, n_jobs).total) for d in test_days])
        actual = raw.pdu_power[i, raw.days_slice(test_days[0], test_days[-1])]
        per_pdu[pid] = mape(pred, actual)
    vals = list(per_pdu.values())
    config["holdout_ids"] = holdout_ids
    return ExperimentReport(
        "holdout",
        {
            "holdouts": holdout_ids,
            "per_pdu": per_pdu,
            "mean_mape": float(np.mean(vals)),
            "cdf": mape_cdf(vals, thresholds).to_dict(),
            "production_reference_mean_mape": 2.23,
        },
        config,
    )


def require_models(models: Mapping[str, object], kinds: Sequence[str]):
    missing = [k for k in kinds if models.get(k) is None]
    if missing:
        raise MissingModelError(f"no trained model for {missing}")
