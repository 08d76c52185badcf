import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdupower.errors import DomainError, TrainingError
from pdupower.perpdu import (
    MIN_REGIME_SAMPLES,
    REGIMES,
    ModelStore,
    PerPduModel,
    continuity_ok,
    daily_retrain,
    envelope_ok,
    fit_per_pdu,
    predict_per_pdu,
    recency_weights,
    segment_regime,
    training_window,
    weighted_line,
)
from pdupower.preprocess import preprocess

from oracles import wls_normal_equations


def _model(cpu_min=0.0, cpu_max=30.0):
    coefs = {"low": (100.0, 1.0), "medium": (90.0, 2.0), "high": (70.0, 3.0)}
    return PerPduModel("p", cpu_min, cpu_max, coefs, 0)


def test_regime_boundaries():
    m = _model()
    assert segment_regime(10.0, m) == "low"  # lower boundary belongs to low
    assert segment_regime(10.0001, m) == "medium"
    assert segment_regime(20.0, m) == "high"
    assert segment_regime(-5.0, m) == "low" and segment_regime(99.0, m) == "high"


def test_predict_uses_regime_line():
    m = _model()
    assert predict_per_pdu(m, 5.0) == 105.0
    assert predict_per_pdu(m, 15.0) == 120.0
    assert predict_per_pdu(m, 25.0) == 145.0
    with pytest.raises(DomainError):
        predict_per_pdu(m, -1.0)


def test_recency_weights():
    assert recency_weights(np.arange(7)).tolist() == [1 / (1 + d) for d in range(7)]


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6))
def test_weighted_line_matches_normal_equations(seed):
    r = np.random.default_rng(seed)
    x = r.uniform(0, 10, 40)
    y = 3.0 + 2.0 * x + r.normal(0, 1, 40)
    w = recency_weights(r.integers(0, 7, 40))
    a, b = weighted_line(x, y, w)
    ref = wls_normal_equations(x, y, w)
    if ref[1] >= 0:
        assert a == pytest.approx(ref[0], rel=1e-9, abs=1e-9)
        assert b == pytest.approx(ref[1], rel=1e-9, abs=1e-9)


def test_negative_slope_clamped_to_weighted_mean():
    x = np.arange(10.0)
    y = 100 - x
    w = np.ones(10)
    assert weighted_line(x, y, w) == (pytest.approx(y.mean()), 0.0)


def test_fit_on_piecewise_truth():
    r = np.random.default_rng(0)
    u = r.uniform(0, 30, 3000)
    u[:2] = 0.0, 30.0  # pin the regime boundaries to 10 and 20
    truth = np.where(u <= 10, 100 + u, np.where(u < 20, 90 + 2 * u, 70 + 3 * u))
    m = fit_per_pdu(u, truth, r.integers(0, 7, 3000))
    for name, (a, b) in zip(REGIMES, [(100, 1), (90, 2), (70, 3)]):
        assert m.coefficients[name] == (pytest.approx(a), pytest.approx(b))
        assert not m.fallback_flags[name]


def test_sparse_regime_falls_back_to_global_line():
    r = np.random.default_rng(1)
    u = np.concatenate([r.uniform(0, 10, 500), [29.0, 30.0]])
    p = 100 + 2 * u
    m = fit_per_pdu(u, p, np.zeros(len(u), dtype=int))
    assert m.fallback_flags["high"] and m.fallback_flags["medium"]
    assert m.coefficients["high"] == m.coefficients["medium"]


def test_regime_coefficients_match_oracle_per_regime():
    r = np.random.default_rng(2)
    u = r.uniform(0, 30, 2000)
    p = 50 + 4 * u + r.normal(0, 5, 2000)
    age = r.integers(0, 7, 2000)
    m = fit_per_pdu(u, p, age)
    idx = m.regime_index(u)
    for k, name in enumerate(REGIMES):
        sel = idx == k
        assert sel.sum() >= MIN_REGIME_SAMPLES
        ref = wls_normal_equations(u[sel], p[sel], recency_weights(age[sel]))
        assert np.allclose(m.coefficients[name], ref, rtol=1e-9, atol=0)


def test_training_errors():
    with pytest.raises(TrainingError):
        fit_per_pdu([], [], [])
    with pytest.raises(TrainingError):
        fit_per_pdu([1.0], [1.0], [7])


def test_round_trip():
    m = _model()
    assert PerPduModel.from_dict(m.to_dict()) == PerPduModel(
        "p", 0.0, 30.0, m.coefficients, 0, {r: False for r in REGIMES}
    )


def test_daily_retrain_on_fixture(small_dataset):
    clean, _ = preprocess(small_dataset)
    store = ModelStore()
    for day in (6, 7):
        daily_retrain(clean, day, store)
    assert store.days() == [6, 7]
    for pdu in small_dataset.fleet.pdus:
        m = store[7][pdu.pdu_id]
        assert m.trained_day == 7
        assert envelope_ok(m, pdu.idle_power, pdu.max_power)
        assert continuity_ok(m, pdu.max_power)
        drift = store.drift(pdu.pdu_id, 7)
        assert all(abs(a) < 0.2 for a, _ in drift.values())


def test_training_window_ages(small_dataset):
    cpu, power, age = training_window(small_dataset, 0, 8)
    assert age.min() == 0 and age.max() == 6
    assert len(cpu) == 7 * 288


def test_window_truncated_at_dataset_start(small_dataset):
    cpu, _, age = training_window(small_dataset, 0, 2)
    assert len(cpu) == 3 * 288 and age.max() == 2
