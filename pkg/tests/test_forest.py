import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from pdupower import _cart
from pdupower.errors import ConfigError, ContractError, SchemaError, TrainingError
from pdupower.forest import (
    EncodingMap,
    FeatureMatrix,
    ForestParams,
    RandomForest,
    allocate_buckets,
    bucket_index,
    fit_forest,
    one_hot_encode,
    predict_forest,
    stratified_sample,
)

from oracles import brute_force_split, brute_force_tree, same_tree


def _tree(X, y, w=None, max_depth=-1, min_leaf=1.0):
    w = np.ones(len(y)) if w is None else w
    presorted = np.argsort(X, axis=0, kind="stable").T.copy().astype(np.int64)
    return _cart.build_tree(X, y, w, presorted, max_depth, float(min_leaf), X.shape[1], 0)


def _instance(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(2, 51))
    X = r.integers(0, 8, (n, 2)).astype(float) if seed % 2 else r.normal(size=(n, 2))
    y = r.integers(0, 6, n).astype(float) if seed % 4 < 2 else r.normal(size=n)
    w = np.ones(n) if seed % 3 else r.integers(1, 3, n).astype(float)
    return X, y, w


@pytest.mark.parametrize("seed", range(60))
def test_root_split_matches_brute_force(seed):
    X, y, w = _instance(seed)
    f, t, *_ = _tree(X, y, w, max_depth=1)
    ref = brute_force_split(X, y, w)
    if ref is None:
        assert f[0] == -1
    else:
        assert (f[0], t[0]) == ref


@pytest.mark.parametrize("seed", range(60))
def test_whole_tree_matches_brute_force(seed):
    X, y, w = _instance(seed)
    min_leaf = [1, 1, 2, 3][seed % 4]
    depth = [-1, 2, -1, 4][seed % 4]
    out = _tree(X, y, w, depth, min_leaf)
    assert same_tree(brute_force_tree(X, y, w, depth, min_leaf), *out[:5])


def test_tie_goes_to_lowest_feature():
    # both columns give the same partition
    X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    f, t, *_ = _tree(X, y, max_depth=1)
    assert (f[0], t[0]) == (0, 1.5)


def test_constant_target_is_a_leaf():
    X = np.arange(10.0).reshape(-1, 1)
    f, _, _, _, v, n = _tree(X, np.full(10, 3.25))
    assert n == 1 and f[0] == -1 and v[0] == 3.25


def test_min_leaf_respected():
    r = np.random.default_rng(0)
    X = r.normal(size=(200, 3))
    y = r.normal(size=200)
    f, t, l, rt, v, _ = _tree(X, y, min_leaf=7)
    leaves = _cart.apply_tree(X, f, t, l, rt)
    assert np.bincount(leaves)[np.unique(leaves)].min() >= 7


def _fm(X, y=None):
    return FeatureMatrix(X, tuple(f"x{i}" for i in range(X.shape[1])), y)


def test_smooth_function_r2():
    r = np.random.default_rng(1)
    x = r.uniform(0, 2 * np.pi, 3000)
    y = np.sin(x) + 0.1 * x
    model = fit_forest(_fm(x[:2000, None], y[:2000]), ForestParams(n_trees=30, seed=2))
    pred = model.predict(_fm(x[2000:, None]))
    resid = y[2000:] - pred
    assert 1 - resid.var() / y[2000:].var() >= 0.95


@settings(max_examples=25, deadline=None)
@given(
    hnp.arrays(np.float64, st.tuples(st.integers(5, 40), st.integers(1, 3)),
               elements=st.floats(-1e3, 1e3)),
    st.integers(0, 2**31 - 1),
)
def test_predictions_within_target_range(X, seed):
    y = np.random.default_rng(seed).normal(size=len(X)) * 10
    model = fit_forest(_fm(X, y), ForestParams(n_trees=5, min_samples_leaf=1, seed=seed))
    probe = np.random.default_rng(seed + 1).normal(size=(50, X.shape[1])) * 1e4
    p = model.predict(_fm(probe))
    assert p.min() >= y.min() and p.max() <= y.max()


def test_row_order_and_thread_invariance():
    r = np.random.default_rng(3)
    X = r.normal(size=(300, 4))
    y = X[:, 0] ** 2 + X[:, 1]
    ids = np.arange(300) * 7
    params = ForestParams(n_trees=8, seed=9)
    a = fit_forest(_fm(X, y), params, row_ids=ids)
    perm = r.permutation(300)
    b = fit_forest(_fm(X[perm], y[perm]), params, row_ids=ids[perm], n_jobs=3)
    probe = _fm(r.normal(size=(100, 4)))
    assert np.array_equal(a.predict(probe), b.predict(probe, n_jobs=2))
    assert a.to_dict() == b.to_dict()


def test_feature_subsampling_is_seeded():
    r = np.random.default_rng(4)
    X = r.normal(size=(200, 6))
    y = X @ np.arange(6.0)
    p = ForestParams(n_trees=4, features_per_split=0.5, seed=1)
    assert fit_forest(_fm(X, y), p).to_dict() == fit_forest(_fm(X, y), p).to_dict()


def test_serialization_round_trip():
    r = np.random.default_rng(5)
    X = r.normal(size=(100, 2))
    model = fit_forest(_fm(X, X[:, 0]), ForestParams(n_trees=3))
    again = RandomForest.from_dict(model.to_dict())
    assert np.array_equal(again.predict(_fm(X)), model.predict(_fm(X)))
    assert again.to_dict() == model.to_dict()


def test_schema_mismatch():
    X = np.random.default_rng(6).normal(size=(20, 2))
    model = fit_forest(_fm(X, X[:, 0]), ForestParams(n_trees=2))
    with pytest.raises(SchemaError):
        predict_forest(model, FeatureMatrix(X, ("x0", "other")))


def test_training_errors():
    with pytest.raises(TrainingError):
        fit_forest(_fm(np.zeros((1, 1)), np.zeros(1)))
    with pytest.raises(TrainingError):
        fit_forest(_fm(np.zeros((3, 1))))
    with pytest.raises(ConfigError):
        ForestParams(n_trees=0)


def test_split_counts():
    X = np.column_stack([np.arange(50.0), np.zeros(50)])
    model = fit_forest(_fm(X, np.arange(50.0)), ForestParams(n_trees=2, bootstrap=False))
    counts = model.split_counts()
    assert counts["x1"] == 0 and counts["x0"] > 0


def test_one_hot_encoding():
    X, enc = one_hot_encode({"c": ["b", "a", "b"], "v": [1.0, 2.0, 3.0]}, ("c",))
    assert X.columns == ("c=a", "c=b", "v")
    assert X.X.tolist() == [[0, 1, 1], [1, 0, 2], [0, 1, 3]]
    Y, _ = one_hot_encode({"c": ["z"], "v": [0.0]}, ("c",), enc)
    assert Y.X.tolist() == [[0, 0, 0]]
    assert EncodingMap.from_dict(enc.to_dict()) == enc


def test_bucket_index_edges():
    assert bucket_index(np.array([0.0, 0.099, 0.1, 0.999, 1.0])).tolist() == [0, 0, 1, 9, 9]


def test_allocate_buckets_redistributes():
    alloc = allocate_buckets([5, 100, 0, 100], 90)
    assert alloc.sum() == 90 and alloc[0] == 5 and alloc[2] == 0
    assert (alloc <= np.array([5, 100, 0, 100])).all()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 500), min_size=1, max_size=10), st.integers(0, 3000))
def test_allocate_buckets_properties(sizes, n_total):
    alloc = allocate_buckets(sizes, n_total)
    assert alloc.sum() == min(n_total, sum(sizes))
    assert (alloc <= np.array(sizes)).all() and (alloc >= 0).all()


def test_stratified_sample():
    r = np.random.default_rng(7)
    key = np.concatenate([r.uniform(0, 0.1, 10), r.uniform(0.1, 1, 5000)])
    idx = stratified_sample(key, 1000, seed=1)
    assert len(idx) == 1000 and np.all(np.diff(idx) > 0)
    assert np.count_nonzero(idx < 10) == 10
    assert np.array_equal(idx, stratified_sample(key, 1000, seed=1))
    assert np.array_equal(stratified_sample(key[:50], 1000), np.arange(50))
    with pytest.raises(ContractError):
        stratified_sample(np.array([1.5]))
