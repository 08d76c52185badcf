"""Compiled kernels for weighted CART regression trees.

Trees are grown on presorted feature columns. Bootstrap resamples are
expressed as integer row multiplicities, so one presort of the training
matrix serves every tree of a forest.
"""

import numpy as np
from numba import njit

LEAF = -1
TIE_TOLERANCE = 1e-11


@njit(cache=True, nogil=True)
def _scan_feature(xs, ys, ws, start, end, mean, min_leaf, total_w, total_s, tol):
    """Best split along one presorted segment.

    Returns (proxy, position, threshold). ``proxy`` is the between-children
    term sum_left^2/w_left + sum_right^2/w_right on mean-centred targets;
    maximising it minimises the children's squared error. A candidate must
    beat the incumbent by more than ``tol`` so that rounding cannot break
    ties against the lowest threshold.
    """
    best = -1.0
    best_pos = -1
    best_thr = 0.0
    wl = 0.0
    sl = 0.0
    for k in range(start, end - 1):
        wl += ws[k]
        sl += ws[k] * (ys[k] - mean)
        x_here = xs[k]
        x_next = xs[k + 1]
        if x_next <= x_here:
            continue
        wr = total_w - wl
        if wl < min_leaf or wr < min_leaf:
            continue
        sr = total_s - sl
        proxy = sl * sl / wl + sr * sr / wr
        if proxy > best + tol:
            best = proxy
            best_pos = k
            thr = 0.5 * (x_here + x_next)
            if thr >= x_next:
                thr = x_here
            best_thr = thr
    return best, best_pos, best_thr


@njit(cache=True, nogil=True)
def build_tree(X, y, w, presorted, max_depth, min_leaf, n_split_features, seed):
    """Grow one regression tree.

    X: (n, F) features; y: (n,) targets; w: (n,) non-negative integer-valued
    row multiplicities (rows with zero weight are out of bag); presorted:
    (F, n) stable argsort of each column of X. ``max_depth < 0`` means
    unlimited. Returns (feature, threshold, left, right, value, n_nodes).

    Every feature keeps its own copy of the in-bag rows (index, x, y, w) in
    sorted order; a split stably partitions each copy so child segments stay
    sorted and scans read memory sequentially.
    """
    np.random.seed(seed)
    n_features = X.shape[1]
    m = 0
    for i in range(X.shape[0]):
        if w[i] > 0:
            m += 1
    seg = np.empty((n_features, m), dtype=np.int64)
    sx = np.empty((n_features, m), dtype=np.float64)
    sy = np.empty((n_features, m), dtype=np.float64)
    sw = np.empty((n_features, m), dtype=np.float64)
    for f in range(n_features):
        k = 0
        for j in range(presorted.shape[1]):
            i = presorted[f, j]
            if w[i] > 0:
                seg[f, k] = i
                sx[f, k] = X[i, f]
                sy[f, k] = y[i]
                sw[f, k] = w[i]
                k += 1
    bi = np.empty(m, dtype=np.int64)
    bx = np.empty(m, dtype=np.float64)
    by = np.empty(m, dtype=np.float64)
    bw = np.empty(m, dtype=np.float64)
    go_left = np.zeros(X.shape[0], dtype=np.bool_)

    cap = 2 * m + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, LEAF, dtype=np.int64)
    right = np.full(cap, LEAF, dtype=np.int64)
    value = np.zeros(cap, dtype=np.float64)

    feats = np.arange(n_features)
    stack_start = np.empty(cap, dtype=np.int64)
    stack_end = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    stack_node = np.empty(cap, dtype=np.int64)
    n_nodes = 1
    if m == 0:
        return feature[:1], threshold[:1], left[:1], right[:1], value[:1], 1
    stack_start[0] = 0
    stack_end[0] = m
    stack_depth[0] = 0
    stack_node[0] = 0
    top = 1

    while top > 0:
        top -= 1
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        node = stack_node[top]

        ys = sy[0]
        ws = sw[0]
        total_w = 0.0
        total_s = 0.0
        first_y = ys[start]
        constant = True
        for k in range(start, end):
            total_w += ws[k]
            total_s += ws[k] * ys[k]
            if ys[k] != first_y:
                constant = False
        if constant:
            value[node] = first_y
            continue
        mean = total_s / total_w
        value[node] = mean
        if (max_depth >= 0 and depth >= max_depth) or total_w < 2.0 * min_leaf:
            continue

        ss = 0.0
        cs = 0.0
        for k in range(start, end):
            d = ys[k] - mean
            ss += ws[k] * d * d
            cs += ws[k] * d

        # proxies closer than this are ties: lowest feature, then lowest threshold
        tie_tol = TIE_TOLERANCE * ss
        if n_split_features < n_features:
            for a in range(n_features):
                feats[a] = a
            for a in range(n_split_features):
                b = a + np.random.randint(n_features - a)
                tmp = feats[a]
                feats[a] = feats[b]
                feats[b] = tmp
            cand = np.sort(feats[:n_split_features])
        else:
            cand = np.arange(n_features)

        best = -1.0
        best_f = -1
        best_thr = 0.0
        best_pos = -1
        for f in cand:
            # each copy sums in its own order; cs from copy 0 differs by rounding only
            proxy, pos, thr = _scan_feature(
                sx[f], sy[f], sw[f], start, end, mean, min_leaf, total_w, cs, tie_tol
            )
            if pos >= 0 and proxy > best + tie_tol:
                best = proxy
                best_f = f
                best_thr = thr
                best_pos = pos
        if best_f < 0 or best <= 1e-12 * ss:
            continue

        n_left = best_pos - start + 1
        for k in range(start, end):
            go_left[seg[best_f, k]] = k < start + n_left
        for f in range(n_features):
            a = 0
            b = n_left
            for k in range(start, end):
                i = seg[f, k]
                if go_left[i]:
                    j = a
                    a += 1
                else:
                    j = b
                    b += 1
                bi[j] = i
                bx[j] = sx[f, k]
                by[j] = sy[f, k]
                bw[j] = sw[f, k]
            for k in range(end - start):
                seg[f, start + k] = bi[k]
                sx[f, start + k] = bx[k]
                sy[f, start + k] = by[k]
                sw[f, start + k] = bw[k]

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lid
        right[node] = rid
        # right pushed first so the left subtree is numbered first
        stack_start[top] = start + n_left
        stack_end[top] = end
        stack_depth[top] = depth + 1
        stack_node[top] = rid
        top += 1
        stack_start[top] = start
        stack_end[top] = start + n_left
        stack_depth[top] = depth + 1
        stack_node[top] = lid
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        n_nodes,
    )


@njit(cache=True, nogil=True)
def predict_tree(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0], dtype=np.float64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] != LEAF:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out


@njit(cache=True, nogil=True)
def apply_tree(X, feature, threshold, left, right):
    """Leaf index reached by each row."""
    out = np.empty(X.shape[0], dtype=np.int64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] != LEAF:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out
