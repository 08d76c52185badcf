"""Independent reference implementations used as test oracles.

Everything here is written as plain loops or exact rational arithmetic so
it shares no code path with the package.
"""

from fractions import Fraction

import numpy as np


def brute_force_split(X, y, w, min_leaf=1):
    """Best (feature, threshold) by exhaustive search with exact arithmetic.

    Candidates are midpoints between consecutive distinct values. The
    criterion is the children's total squared error. Ties go to the lowest
    feature, then the lowest threshold. Returns None when no split lowers
    the error.
    """
    n, F = len(y), X.shape[1]
    rows = [i for i in range(n) if w[i] > 0]
    ys = {i: Fraction(y[i]) for i in rows}
    ws = {i: Fraction(w[i]) for i in rows}

    def sse(idx):
        W = sum(ws[i] for i in idx)
        S = sum(ws[i] * ys[i] for i in idx)
        return sum(ws[i] * ys[i] * ys[i] for i in idx) - S * S / W

    parent = sse(rows)
    best = None
    for f in range(F):
        values = sorted({X[i, f] for i in rows})
        for a, b in zip(values, values[1:]):
            thr = 0.5 * (a + b)
            left = [i for i in rows if X[i, f] <= a]
            right = [i for i in rows if X[i, f] > a]
            if sum(ws[i] for i in left) < min_leaf or sum(ws[i] for i in right) < min_leaf:
                continue
            err = sse(left) + sse(right)
            if err >= parent:
                continue
            if best is None or err < best[0]:
                best = (err, f, thr)
    return None if best is None else (best[1], best[2])


def brute_force_tree(X, y, w, max_depth=-1, min_leaf=1):
    """Full tree as nested dicts built from :func:`brute_force_split`."""

    def grow(idx, depth):
        live = [i for i in idx if w[i] > 0]
        W = sum(Fraction(w[i]) for i in live)
        S = sum(Fraction(w[i]) * Fraction(y[i]) for i in live)
        node = {"value": float(S / W)}
        if len({y[i] for i in live}) == 1:
            return node
        if (max_depth >= 0 and depth >= max_depth) or W < 2 * min_leaf:
            return node
        sub_w = np.zeros_like(w)
        sub_w[live] = w[live]
        split = brute_force_split(X, y, sub_w, min_leaf)
        if split is None:
            return node
        f, thr = split
        node.update(
            feature=f,
            threshold=thr,
            left=grow([i for i in live if X[i, f] <= thr], depth + 1),
            right=grow([i for i in live if X[i, f] > thr], depth + 1),
        )
        return node

    return grow(list(range(len(y))), 0)


def same_tree(ref, feature, threshold, left, right, value, node=0, rtol=1e-12):
    """True when the engine arrays describe the nested oracle tree."""
    if "feature" not in ref:
        return feature[node] == -1 and abs(value[node] - ref["value"]) <= rtol * abs(ref["value"])
    return (
        feature[node] == ref["feature"]
        and threshold[node] == ref["threshold"]
        and same_tree(ref["left"], feature, threshold, left, right, value, left[node], rtol)
        and same_tree(ref["right"], feature, threshold, left, right, value, right[node], rtol)
    )


def naive_mape(pred, actual):
    total, count = 0.0, 0
    for p, a in zip(pred, actual):
        if a > 0 and p == p:
            total += abs(p - a) / a
            count += 1
    return 100.0 * total / count


def naive_cdf(values, thresholds):
    out = []
    for t in thresholds:
        below = 0
        for v in values:
            if v < t:
                below += 1
        out.append(below / len(values))
    return out


def naive_wupe(pred, actual, high, day, eval_day, lookback=90):
    worst = None
    for p, a, h, d in zip(pred, actual, high, day):
        if h and eval_day - lookback <= d <= eval_day - 1 and a > 0:
            e = 100.0 * (a - p) / a
            if worst is None or e > worst:
                worst = e
    return worst


def wls_normal_equations(x, y, w):
    """(alpha, beta) from the 2x2 weighted normal equations."""
    A = np.array([[np.sum(w), np.sum(w * x)], [np.sum(w * x), np.sum(w * x * x)]])
    b = np.array([np.sum(w * y), np.sum(w * x * y)])
    return np.linalg.solve(A, b)
