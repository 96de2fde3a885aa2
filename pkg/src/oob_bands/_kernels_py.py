"""Numpy implementation of the tree-growing hot kernels.

Fallback for environments where the compiled extension is unavailable.
Both backends must produce bit-identical results: scores are evaluated with
the same operation order (np.cumsum accumulates sequentially, matching the
C running sums), sorts are stable by (value, position), and no backend may
reassociate floating-point sums.
"""

import numpy as np

BACKEND = "python"

_NEG_INF = float("-inf")


def eval_node(X, y, part, start, end, features):
    """Node statistics plus the best variance-reduction split.

    Returns (sum, sum_sq, y_min, y_max, feature, threshold, n_left, proxy);
    feature is -1 when the node is pure, no candidate threshold exists, or
    `features` is empty.  The proxy score is sum_l^2/n_l + sum_r^2/n_r,
    monotone in the weighted variance reduction for a fixed node.
    """
    seg = part[start:end]
    ys = y[seg]
    m = end - start
    s = float(np.cumsum(ys)[-1])
    ss = float(np.cumsum(ys * ys)[-1])
    lo = float(ys.min())
    hi = float(ys.max())

    best_f = -1
    best_thr = 0.0
    best_nl = 0
    best_proxy = _NEG_INF
    if len(features) and lo < hi:
        for f in features:
            vals = X[seg, f]
            order = np.argsort(vals, kind="stable")
            v = vals[order]
            if v[0] == v[m - 1]:
                continue
            cy = np.cumsum(ys[order])
            cand = np.nonzero(v[:-1] < v[1:])[0]
            nl = cand + 1
            sl = cy[cand]
            rl = s - sl
            proxy = sl * sl / nl + rl * rl / (m - nl)
            j = int(np.argmax(proxy))
            if proxy[j] > best_proxy:
                i = int(cand[j])
                thr = 0.5 * (v[i] + v[i + 1])
                if thr >= v[i + 1]:
                    # adjacent floats can round the midpoint up onto the
                    # right value; fall back to the left value so the split
                    # stays non-degenerate under "<= goes left"
                    thr = v[i]
                best_f = int(f)
                best_thr = float(thr)
                best_nl = i + 1
                best_proxy = float(proxy[j])
    return s, ss, lo, hi, best_f, best_thr, best_nl, best_proxy


def partition_stable(X, part, start, end, feature, threshold):
    """Reorder part[start:end] so samples with x <= threshold come first.

    Stable on both sides; returns the left-block size.
    """
    seg = part[start:end].copy()
    go_left = X[seg, feature] <= threshold
    nl = int(np.count_nonzero(go_left))
    part[start:start + nl] = seg[go_left]
    part[start + nl:end] = seg[~go_left]
    return nl


def predict_batch(feature, threshold, left, right, value, X):
    """Leaf-mean prediction for every row of X."""
    return value[leaf_assign(feature, threshold, left, right, X)].astype(
        np.float64, copy=False
    )


def leaf_assign(feature, threshold, left, right, X):
    """Index of the leaf that each row of X is routed to."""
    m = X.shape[0]
    node = np.zeros(m, dtype=np.int32)
    idx = np.nonzero(feature[node] >= 0)[0]
    while idx.size:
        nd = node[idx]
        go_left = X[idx, feature[nd]] <= threshold[nd]
        node[idx] = np.where(go_left, left[nd], right[nd])
        idx = idx[feature[node[idx]] >= 0]
    return node
