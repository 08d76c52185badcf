import numpy as np
import pytest

from pdupower.errors import ContractError, DomainError
from pdupower.evaluation import mape
from pdupower.fleet_sim import OVERHEAD_SETPOINT, PLATFORM_FAMILIES
from pdupower.forest import ForestParams
from pdupower.preprocess import preprocess
from pdupower.unified_machine import (
    baseline_linear_machine,
    build_machine_training_set,
    estimate_overhead,
    predict_machines,
    predict_pdu_day_um,
    predict_pdu_power_um,
    train_unified_machine,
)
from pdupower.unified_pdu import (
    build_pdu_training_set,
    family_cpu_usage,
    pdu_features,
    predict_pdu_day_up,
    train_unified_pdu,
)

PARAMS = ForestParams(n_trees=10, seed=1)


@pytest.fixture(scope="module")
def clean(small_dataset):
    return preprocess(small_dataset)[0]


@pytest.fixture(scope="module")
def um(clean):
    ts = build_machine_training_set(clean, 0, samples_per_group=400, seed=2)
    return ts, train_unified_machine(ts, PARAMS)


def test_training_set_groups(um, clean):
    ts, _ = um
    specs = clean.fleet.machines
    groups = {(m.config_code, m.dedicated_label) for m in specs}
    assert set(ts.group_sizes) == groups
    assert all(0 < n <= 400 for n in ts.group_sizes.values())
    assert len(ts.row_ids) == sum(ts.group_sizes.values()) == ts.matrix.n_rows
    assert len(np.unique(ts.row_ids)) == len(ts.row_ids)
    # row ids decode to the sampled (machine, period)
    m_idx, t_idx = np.divmod(ts.row_ids, clean.n_periods)
    cols = list(ts.matrix.columns)
    assert np.array_equal(ts.matrix.X[:, cols.index("cpu_usage")], clean.machine_cpu[m_idx, t_idx])
    assert np.array_equal(ts.matrix.target, clean.machine_power[m_idx, t_idx])
    assert t_idx.max() < 7 * 288


def test_training_set_is_deterministic(clean, um):
    ts2 = build_machine_training_set(clean, 0, samples_per_group=400, seed=2)
    assert np.array_equal(um[0].row_ids, ts2.row_ids)


def test_machine_predictions_track_truth(um, clean):
    _, model = um
    specs = clean.fleet.machines[:8]
    sl = clean.day_slice(8)
    pred = predict_machines(model, specs, clean.machine_cpu[:8, sl])
    assert mape(pred.ravel(), clean.machine_true_power[:8, sl].ravel()) < 5


def test_pdu_prediction_accuracy(um, small_dataset, clean):
    _, model = um
    for i in range(len(clean.pdu_ids)):
        pred = predict_pdu_day_um(model, clean, i, 8)
        assert mape(pred.total, small_dataset.pdu_power[i, clean.day_slice(8)]) < 5


def test_pdu_sum_and_scalar_input(um, clean):
    _, model = um
    pdu = clean.fleet.pdus[0]
    usage = {m.machine_id: 10.0 for m in pdu.machines}
    res = predict_pdu_power_um(model, pdu, usage, overhead=50.0)
    assert isinstance(res.total, float)
    assert res.total == pytest.approx(sum(res.per_machine.values()) + 50.0)
    usage.pop(pdu.machines[0].machine_id)
    with pytest.raises(ContractError):
        predict_pdu_power_um(model, pdu, usage, overhead=0.0)


def test_overhead_estimate(clean):
    pdu = clean.fleet.pdus[0]
    o = estimate_overhead(pdu, clean, 0, 3)
    true = clean.pdu_overhead[0, clean.day_slice(2)].mean()
    assert o == pytest.approx(true, rel=0.1)
    assert estimate_overhead(pdu, clean, 0, 0) == OVERHEAD_SETPOINT * pdu.overhead_capacity


def test_baseline_linear(small_fleet):
    m = small_fleet.machines[0]
    assert baseline_linear_machine(m, 0.0) == m.idle_power
    assert baseline_linear_machine(m, 1.0) == m.max_power
    with pytest.raises(DomainError):
        baseline_linear_machine(m, -0.1)


def test_pdu_features_fixed_width(small_fleet):
    pdu = small_fleet.pdus[0]
    X = pdu_features(pdu, np.zeros((len(PLATFORM_FAMILIES), 3)))
    assert X.X.shape == (3, 2 + 10 + 10 + 2 + 3)
    cols = list(X.columns)
    arch = pdu.architecture_type
    assert X.X[0, cols.index(f"architecture_type={arch}")] == 1.0
    for f in PLATFORM_FAMILIES:
        assert X.X[0, cols.index(f"count_{f}")] == pdu.family_counts[f]


def test_family_usage_sums_to_pdu_cpu(small_dataset):
    sl = small_dataset.day_slice(0)
    fam = family_cpu_usage(small_dataset, 1, sl)
    assert np.allclose(fam.sum(axis=0), small_dataset.pdu_cpu[1, sl], rtol=1e-12)


def test_unified_pdu_model(clean, small_dataset):
    ts = build_pdu_training_set(clean, 0, max_rows=3000, seed=1)
    assert ts.matrix.n_rows == 3000
    model = train_unified_pdu(ts, PARAMS)
    for i in range(len(clean.pdu_ids)):
        pred = predict_pdu_day_up(model, small_dataset, i, 8)
        assert mape(pred, small_dataset.pdu_power[i, clean.day_slice(8)]) < 6


def test_training_requires_machines(small_fleet):
    from pdupower.fleet_sim import simulate_telemetry

    ds = simulate_telemetry(small_fleet, n_days=1, record_machines=False)
    with pytest.raises(ContractError):
        build_machine_training_set(ds, 0, n_days=1)
    with pytest.raises(ContractError):
        build_pdu_training_set(ds, 0, n_days=1)
