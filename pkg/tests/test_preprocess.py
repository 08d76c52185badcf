import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdupower.errors import ConfigError, ContractError
from pdupower.fleet_sim import PERIODS_PER_DAY, AnomalyConfig, inject_anomalies
from pdupower.preprocess import (
    INTERPOLATED,
    MISSING,
    REMOVED_LOW,
    REMOVED_RATE,
    CleaningConfig,
    ewma_smooth_jumps,
    filter_low_power,
    filter_rate_anomalies,
    interpolate_gaps,
    preprocess,
    usable,
)


def test_interpolate_short_gap():
    x, filled, missing = interpolate_gaps([1.0, np.nan, np.nan, 4.0])
    assert x.tolist() == [1.0, 2.0, 3.0, 4.0]
    assert filled.tolist() == [False, True, True, False] and not missing.any()


def test_interpolate_leaves_long_and_edge_gaps():
    nan = np.nan
    x, filled, missing = interpolate_gaps([nan, 1.0, nan, nan, nan, nan, 2.0, nan], max_gap=3)
    assert missing.tolist() == [True, False, True, True, True, True, False, True]
    assert not filled.any()


def test_interpolate_rejects_unsorted_timestamps():
    with pytest.raises(ContractError):
        interpolate_gaps([1.0, 2.0], timestamps=[1, 1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.one_of(st.floats(1, 100), st.just(float("nan"))), min_size=1, max_size=60),
       st.integers(1, 5))
def test_interpolation_properties(values, max_gap):
    x, filled, missing = interpolate_gaps(values, max_gap)
    v = np.asarray(values)
    present = ~np.isnan(v)
    assert np.array_equal(x[present], v[present])
    assert not (filled & present).any()
    assert np.array_equal(missing, np.isnan(x))
    # filled values lie between the neighbouring observations
    for t in np.flatnonzero(filled):
        lo = v[:t][~np.isnan(v[:t])][-1]
        hi = v[t:][~np.isnan(v[t:])][0]
        assert min(lo, hi) - 1e-9 <= x[t] <= max(lo, hi) + 1e-9


def test_ewma_smooths_only_jumps():
    x, mask = ewma_smooth_jumps([10.0, 11.0, 20.0, 20.0], 0.3, 0.3)
    assert mask.tolist() == [False, False, True, True]
    assert x[2] == pytest.approx(0.3 * 20 + 0.7 * 11)
    # 20 vs smoothed 13.7 is still a jump
    assert x[3] == pytest.approx(0.3 * 20 + 0.7 * x[2])


def test_ewma_rejects_non_positive():
    with pytest.raises(ContractError):
        ewma_smooth_jumps([1.0, 0.0])


def test_rate_filter_drops_spike_but_not_its_successor():
    power = np.array([100.0, 101.0, 300.0, 102.0, 103.0])
    cpu = np.array([10.0, 10.0, 10.0, 10.0, 10.0])
    keep = filter_rate_anomalies(power, cpu, 20, power_scale=400, cpu_scale=100, floor=0.1)
    assert keep.tolist() == [True, True, False, True, True]


def test_rate_filter_keeps_power_that_tracks_cpu():
    power = np.array([100.0, 200.0, 300.0])
    cpu = np.array([10.0, 60.0, 110.0])
    assert filter_rate_anomalies(power, cpu, 20, 400, 100).all()


def test_low_power_filter():
    p = np.array([100.0, 100.0, 100.0, 70.0, 90.0])
    assert filter_low_power(p, 0.8).tolist() == [True, True, True, False, True]
    with pytest.warns(RuntimeWarning):
        assert not filter_low_power(np.full(3, np.nan)).any()


def test_config_validation():
    with pytest.raises(ConfigError):
        CleaningConfig(median_fraction=1.2)
    with pytest.raises(ConfigError):
        CleaningConfig(rate_ratio=0)


def test_clean_data_loses_almost_nothing(small_dataset):
    clean, report = preprocess(small_dataset)
    assert report.n_removed <= 0.001 * report.n_input
    assert report.machine["n_removed_rate"] <= 0.001 * report.machine["n_input"]


def test_noise_free_data_is_untouched(small_fleet):
    from pdupower.fleet_sim import LoadScenario, simulate_telemetry

    ds = simulate_telemetry(small_fleet, LoadScenario(), n_days=3, noise_sigma=0.0, seed=1)
    clean, report = preprocess(ds)
    assert report.n_removed == 0 and report.n_smoothed == 0
    assert np.array_equal(clean.pdu_power, ds.pdu_power)


def test_anomalies_flagged_and_idempotent(small_dataset):
    cfg = AnomalyConfig(n_gaps=2, n_spikes=4, n_maintenance=1)
    dirty, ledger = inject_anomalies(small_dataset, cfg, seed=3)
    clean, report = preprocess(dirty)
    again, report2 = preprocess(clean)
    for name in ("pdu_power", "pdu_cpu", "pdu_flags", "machine_flags"):
        assert np.array_equal(getattr(clean, name), getattr(again, name), equal_nan=True)
    assert report2.n_removed_rate == 0 or report2.n_removed == report.n_removed
    hits = total = 0
    for a in ledger:
        if a.kind == "gap":
            continue
        i = dirty.pdu_index(a.pdu_id)
        total += a.length
        hits += int(np.count_nonzero(~usable(clean.pdu_flags[i, a.start:a.start + a.length])))
    assert hits >= 0.9 * total


def test_gaps_interpolated_and_flagged(small_dataset):
    dirty, ledger = inject_anomalies(small_dataset, AnomalyConfig(n_gaps=1, gap_len=2), seed=1)
    clean, _ = preprocess(dirty)
    for a in ledger:
        i = dirty.pdu_index(a.pdu_id)
        sl = slice(a.start, a.start + a.length)
        assert ((clean.pdu_flags[i, sl] & INTERPOLATED) > 0).all()
        assert not np.isnan(clean.pdu_power[i, sl]).any()


def test_long_gap_marked_missing(small_dataset):
    dirty, ledger = inject_anomalies(small_dataset, AnomalyConfig(n_gaps=1, gap_len=6), seed=2)
    clean, report = preprocess(dirty)
    a = ledger[0]
    i = dirty.pdu_index(a.pdu_id)
    assert ((clean.pdu_flags[i, a.start:a.start + a.length] & MISSING) > 0).all()
    assert report.n_missing == 6 * len(dirty.pdu_ids)


def test_report_counts_match_flags(small_dataset):
    dirty, _ = inject_anomalies(small_dataset, AnomalyConfig(n_spikes=3, n_maintenance=1), seed=4)
    clean, report = preprocess(dirty)
    f = clean.pdu_flags
    assert report.n_removed_rate == np.count_nonzero(f & REMOVED_RATE)
    assert report.n_removed_low == np.count_nonzero(f & REMOVED_LOW)
    assert report.n_input == f.size
    assert report.retained_fraction == pytest.approx(np.count_nonzero(usable(f)) / f.size)
    assert sum(r["n_input"] for r in report.per_pdu.values()) == report.n_input
    assert report.to_dict()["n_removed"] == report.n_removed
