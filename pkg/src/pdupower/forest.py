"""Random-forest regression built on the compiled CART kernels, plus the
one-hot encoding and stratified sampling utilities used by both unified
models."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _cart
from .errors import ConfigError, ContractError, SchemaError, TrainingError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureMatrix:
    X: np.ndarray
    columns: tuple[str, ...]
    target: np.ndarray | None = None

    def __post_init__(self):
        if len(set(self.columns)) != len(self.columns):
            raise SchemaError("duplicate column names")
        if self.X.ndim != 2 or self.X.shape[1] != len(self.columns):
            raise SchemaError(
                f"matrix has shape {self.X.shape} for {len(self.columns)} columns"
            )
        if np.isnan(self.X).any():
            raise SchemaError("feature matrix contains missing values")
        if self.target is not None and len(self.target) != self.X.shape[0]:
            raise SchemaError("target length does not match row count")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class EncodingMap:
    """Categorical column -> ordered category values."""

    categories: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def column_names(self, name: str) -> list[str]:
        return [f"{name}={v}" for v in self.categories[name]]

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in self.categories.items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "EncodingMap":
        return cls({k: tuple(v) for k, v in d.items()})


def one_hot_encode(
    columns: Mapping[str, Sequence],
    categorical: Sequence[str],
    encoding: EncodingMap | None = None,
    target=None,
) -> tuple[FeatureMatrix, EncodingMap]:
    """Assemble a numeric matrix, expanding ``categorical`` columns to 0/1 blocks.

    Column order follows ``columns``. When ``encoding`` is None it is built
    from the observed values (sorted, so row order does not matter). Values
    missing from a supplied encoding produce an all-zero block.
    """
    categorical = set(categorical)
    if encoding is None:
        encoding = EncodingMap(
            {
                name: tuple(sorted({str(v) for v in columns[name]}))
                for name in columns
                if name in categorical
            }
        )
    blocks = []
    names: list[str] = []
    n_rows = None
    for name, values in columns.items():
        if name in categorical:
            values = np.asarray([str(v) for v in values])
            cats = encoding.categories.get(name)
            if cats is None:
                raise SchemaError(f"no encoding for categorical column {name!r}")
            block = np.zeros((len(values), len(cats)))
            lookup = {c: j for j, c in enumerate(cats)}
            unseen = set()
            for r, v in enumerate(values):
                j = lookup.get(v)
                if j is None:
                    unseen.add(v)
                else:
                    block[r, j] = 1.0
            if unseen:
                log.warning(
                    "column %s: unseen categories %s encoded as all-zero",
                    name,
                    sorted(unseen),
                )
            blocks.append(block)
            names.extend(encoding.column_names(name))
        else:
            col = np.asarray(values, dtype=np.float64).reshape(-1, 1)
            blocks.append(col)
            names.append(name)
        rows = blocks[-1].shape[0]
        if n_rows is not None and rows != n_rows:
            raise SchemaError(f"column {name!r} has {rows} rows, expected {n_rows}")
        n_rows = rows
    X = np.hstack(blocks) if blocks else np.zeros((0, 0))
    y = None if target is None else np.asarray(target, dtype=np.float64)
    return FeatureMatrix(X, tuple(names), y), encoding


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = 16
    min_samples_leaf: int = 5
    features_per_split: float = 1.0
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.min_samples_leaf < 1:
            raise ConfigError("n_trees and min_samples_leaf must be positive")
        if self.max_depth is not None and self.max_depth < 1:
            raise ConfigError("max_depth must be positive or None")
        if not 0.0 < self.features_per_split <= 1.0:
            raise ConfigError("features_per_split must lie in (0, 1]")


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _cart.predict_tree(
            X, self.feature, self.threshold, self.left, self.right, self.value
        )

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _cart.apply_tree(X, self.feature, self.threshold, self.left, self.right)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
        )


@dataclass(frozen=True)
class RandomForest:
    trees: tuple[Tree, ...]
    params: ForestParams
    columns: tuple[str, ...]
    encoding: EncodingMap
    target_range: tuple[float, float]

    def predict(self, X: FeatureMatrix, n_jobs: int = 1) -> np.ndarray:
        return predict_forest(self, X, n_jobs=n_jobs)

    def split_counts(self) -> dict[str, int]:
        counts = dict.fromkeys(self.columns, 0)
        for tree in self.trees:
            for f in tree.feature[tree.feature >= 0]:
                counts[self.columns[f]] += 1
        return counts

    def to_dict(self) -> dict:
        p = self.params
        return {
            "params": {
                "n_trees": p.n_trees,
                "max_depth": p.max_depth,
                "min_samples_leaf": p.min_samples_leaf,
                "features_per_split": p.features_per_split,
                "bootstrap": p.bootstrap,
                "seed": p.seed,
            },
            "columns": list(self.columns),
            "encoding": self.encoding.to_dict(),
            "target_range": list(self.target_range),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RandomForest":
        return cls(
            trees=tuple(Tree.from_dict(t) for t in d["trees"]),
            params=ForestParams(**d["params"]),
            columns=tuple(d["columns"]),
            encoding=EncodingMap.from_dict(d["encoding"]),
            target_range=tuple(d["target_range"]),
        )


def _map(fn, items, n_jobs):
    if n_jobs == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def fit_forest(
    X: FeatureMatrix,
    params: ForestParams = ForestParams(),
    encoding: EncodingMap | None = None,
    row_ids: Sequence | None = None,
    n_jobs: int = 1,
) -> RandomForest:
    """Fit a bagged ensemble of CART regression trees on squared error.

    Rows are put in canonical order by ``row_ids`` (default: position)
    before bootstrap draws, so the fitted forest depends on the set of
    (row_id, features, target) triples, not on input order. Tree ``k``
    draws from its own stream keyed by ``(params.seed, k)``.
    """
    if X.target is None:
        raise TrainingError("feature matrix has no target")
    n = X.n_rows
    if n < 2:
        raise TrainingError(f"need at least 2 rows, got {n}")
    y = np.asarray(X.target, dtype=np.float64)
    if not np.isfinite(y).all():
        raise TrainingError("target contains non-finite values")
    data = np.ascontiguousarray(X.X, dtype=np.float64)
    if row_ids is not None:
        order = np.argsort(np.asarray(row_ids), kind="stable")
        data = np.ascontiguousarray(data[order])
        y = y[order]
    presorted = np.ascontiguousarray(
        np.argsort(data, axis=0, kind="stable").T.astype(np.int64)
    )
    n_features = data.shape[1]
    n_split = max(1, int(round(params.features_per_split * n_features)))
    max_depth = -1 if params.max_depth is None else params.max_depth

    def grow(k: int) -> Tree:
        rng = np.random.default_rng([params.seed, k])
        if params.bootstrap:
            w = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
        else:
            w = np.ones(n)
        node_seed = int(rng.integers(0, 2**31 - 1))
        f, t, l, r, v, _ = _cart.build_tree(
            data, y, w, presorted, max_depth,
            float(params.min_samples_leaf), n_split, node_seed,
        )
        return Tree(f, t, l, r, v)

    trees = _map(grow, list(range(params.n_trees)), n_jobs)
    return RandomForest(
        trees=tuple(trees),
        params=params,
        columns=X.columns,
        encoding=encoding if encoding is not None else EncodingMap(),
        target_range=(float(y.min()), float(y.max())),
    )


def predict_forest(model: RandomForest, X: FeatureMatrix, n_jobs: int = 1) -> np.ndarray:
    """Mean of per-tree leaf values, clipped to the training target range."""
    if tuple(X.columns) != tuple(model.columns):
        missing = set(model.columns) - set(X.columns)
        extra = set(X.columns) - set(model.columns)
        raise SchemaError(
            f"column schema mismatch (missing {sorted(missing)}, extra {sorted(extra)})"
        )
    data = np.ascontiguousarray(X.X, dtype=np.float64)
    if data.shape[0] == 0:
        return np.zeros(0)
    per_tree = _map(lambda t: t.predict(data), list(model.trees), n_jobs)
    total = np.zeros(data.shape[0])
    for p in per_tree:
        total += p
    lo, hi = model.target_range
    return np.clip(total / len(model.trees), lo, hi)


def bucket_index(strat_key: np.ndarray, n_buckets: int = 10) -> np.ndarray:
    """Equal-width bucket of a fraction in [0, 1]; 1.0 falls in the top bucket."""
    return np.minimum((np.asarray(strat_key) * n_buckets).astype(np.int64), n_buckets - 1)


def allocate_buckets(sizes: Sequence[int], n_total: int) -> np.ndarray:
    """Per-bucket sample counts.

    Non-empty buckets get an equal share; shortfalls of buckets smaller than
    their share are handed to the others in proportion to their remaining
    rows (largest remainder rounding, ties to the lower bucket).
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.sum() <= n_total:
        return sizes.copy()
    nonempty = np.flatnonzero(sizes > 0)
    share, extra = divmod(n_total, len(nonempty))
    target = np.zeros_like(sizes)
    target[nonempty] = share
    target[nonempty[:extra]] += 1
    alloc = np.minimum(target, sizes)
    deficit = int(n_total - alloc.sum())
    if deficit > 0:
        remaining = sizes - alloc
        quota = deficit * remaining / remaining.sum()
        add = np.floor(quota).astype(np.int64)
        left = deficit - int(add.sum())
        frac = quota - add
        # stable sort on -frac keeps lower bucket first among ties
        for b in np.argsort(-frac, kind="stable")[:left]:
            add[b] += 1
        alloc += add
    return alloc


def stratified_sample(
    strat_key: np.ndarray,
    n_total: int = 30000,
    n_buckets: int = 10,
    seed: int = 0,
) -> np.ndarray:
    """Row indices sampled evenly across equal-width buckets of ``strat_key``.

    Returns all indices when there are at most ``n_total`` rows. Output is
    sorted, and depends only on (strat_key, n_total, n_buckets, seed).
    """
    key = np.asarray(strat_key, dtype=np.float64)
    n = len(key)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if np.any(key < 0) or np.any(key > 1) or np.isnan(key).any():
        raise ContractError("stratification key must lie in [0, 1]")
    if n <= n_total:
        return np.arange(n)
    buckets = bucket_index(key, n_buckets)
    members = [np.flatnonzero(buckets == b) for b in range(n_buckets)]
    alloc = allocate_buckets([len(m) for m in members], n_total)
    rng = np.random.default_rng(seed)
    picked = [
        rng.choice(m, size=k, replace=False) if k < len(m) else m
        for m, k in zip(members, alloc)
        if k > 0
    ]
    return np.sort(np.concatenate(picked))
