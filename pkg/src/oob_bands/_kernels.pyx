# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tree-growing hot kernels.

Same contract as _kernels_py: results must be bit-identical to the numpy
fallback, so sums run in segment order, sorts order by (value, position),
and score expressions mirror the fallback's operation order exactly.
"""

import numpy as np

BACKEND = "c"

cdef double NEG_INF = float("-inf")


cdef inline bint _less(double va, int pa, double vb, int pb) noexcept nogil:
    return va < vb or (va == vb and pa < pb)


cdef void _sort_pairs(double* v, int* p, Py_ssize_t lo, Py_ssize_t hi) noexcept nogil:
    # quicksort by (value, position); pairs are unique so the order is total.
    # Median-of-three pivot, recurse into the smaller side only.
    cdef Py_ssize_t i, j, mid, l, h
    cdef double pv, tv
    cdef int pp, tp
    while hi - lo > 16:
        mid = lo + (hi - lo) // 2
        if _less(v[mid], p[mid], v[lo], p[lo]):
            tv = v[lo]; v[lo] = v[mid]; v[mid] = tv
            tp = p[lo]; p[lo] = p[mid]; p[mid] = tp
        if _less(v[hi], p[hi], v[lo], p[lo]):
            tv = v[lo]; v[lo] = v[hi]; v[hi] = tv
            tp = p[lo]; p[lo] = p[hi]; p[hi] = tp
        if _less(v[hi], p[hi], v[mid], p[mid]):
            tv = v[mid]; v[mid] = v[hi]; v[hi] = tv
            tp = p[mid]; p[mid] = p[hi]; p[hi] = tp
        pv = v[mid]
        pp = p[mid]
        l = lo
        h = hi
        while True:
            while _less(v[l], p[l], pv, pp):
                l += 1
            while _less(pv, pp, v[h], p[h]):
                h -= 1
            if l >= h:
                break
            tv = v[l]; v[l] = v[h]; v[h] = tv
            tp = p[l]; p[l] = p[h]; p[h] = tp
            l += 1
            h -= 1
        if h - lo < hi - h:
            _sort_pairs(v, p, lo, h)
            lo = h + 1
        else:
            _sort_pairs(v, p, h + 1, hi)
            hi = h
    for i in range(lo + 1, hi + 1):
        tv = v[i]
        tp = p[i]
        j = i - 1
        while j >= lo and _less(tv, tp, v[j], p[j]):
            v[j + 1] = v[j]
            p[j + 1] = p[j]
            j -= 1
        v[j + 1] = tv
        p[j + 1] = tp


def eval_node(const double[:, ::1] X, const double[::1] y, const int[::1] part,
              Py_ssize_t start, Py_ssize_t end, int[::1] features):
    """See _kernels_py.eval_node."""
    cdef Py_ssize_t m = end - start
    cdef Py_ssize_t i, k, nl, f_best_i
    cdef int f, smp
    cdef double s = 0.0
    cdef double ss = 0.0
    cdef double lo = 0.0
    cdef double hi = 0.0
    cdef double yv, run, sl, rl, proxy, thr, f_best_proxy
    cdef int best_f = -1
    cdef Py_ssize_t best_nl = 0
    cdef double best_thr = 0.0
    cdef double best_proxy = NEG_INF

    for i in range(m):
        yv = y[part[start + i]]
        s += yv
        ss += yv * yv
        if i == 0:
            lo = yv
            hi = yv
        else:
            if yv < lo:
                lo = yv
            if yv > hi:
                hi = yv

    if features.shape[0] == 0 or lo == hi:
        return s, ss, lo, hi, best_f, best_thr, best_nl, best_proxy

    v_arr = np.empty(m, dtype=np.float64)
    p_arr = np.empty(m, dtype=np.int32)
    cdef double[::1] v = v_arr
    cdef int[::1] pos = p_arr

    with nogil:
        for k in range(features.shape[0]):
            f = features[k]
            for i in range(m):
                v[i] = X[part[start + i], f]
                pos[i] = <int> i
            _sort_pairs(&v[0], &pos[0], 0, m - 1)
            if v[0] == v[m - 1]:
                continue
            run = 0.0
            f_best_proxy = NEG_INF
            f_best_i = 0
            for i in range(m - 1):
                run += y[part[start + pos[i]]]
                if v[i] < v[i + 1]:
                    nl = i + 1
                    sl = run
                    rl = s - sl
                    proxy = sl * sl / nl + rl * rl / (m - nl)
                    if proxy > f_best_proxy:
                        f_best_proxy = proxy
                        f_best_i = i
            if f_best_proxy > best_proxy:
                i = f_best_i
                thr = 0.5 * (v[i] + v[i + 1])
                if thr >= v[i + 1]:
                    thr = v[i]
                best_f = f
                best_thr = thr
                best_nl = i + 1
                best_proxy = f_best_proxy

    return s, ss, lo, hi, best_f, best_thr, best_nl, best_proxy


def partition_stable(const double[:, ::1] X, int[::1] part, Py_ssize_t start,
                     Py_ssize_t end, int feature, double threshold):
    """See _kernels_py.partition_stable."""
    cdef Py_ssize_t m = end - start
    tmp_arr = np.empty(m, dtype=np.int32)
    cdef int[::1] tmp = tmp_arr
    cdef Py_ssize_t i, nl = 0, nr = 0
    cdef int smp
    with nogil:
        for i in range(m):
            smp = part[start + i]
            if X[smp, feature] <= threshold:
                # write index never passes the read index, so in-place is safe
                part[start + nl] = smp
                nl += 1
            else:
                tmp[nr] = smp
                nr += 1
        for i in range(nr):
            part[start + nl + i] = tmp[i]
    return nl


def leaf_assign(const int[::1] feature, const double[::1] threshold, const int[::1] left,
                const int[::1] right, const double[:, ::1] X):
    """See _kernels_py.leaf_assign."""
    cdef Py_ssize_t mrows = X.shape[0]
    out_arr = np.empty(mrows, dtype=np.int32)
    cdef int[::1] out = out_arr
    cdef Py_ssize_t r
    cdef int nid
    with nogil:
        for r in range(mrows):
            nid = 0
            while feature[nid] >= 0:
                if X[r, feature[nid]] <= threshold[nid]:
                    nid = left[nid]
                else:
                    nid = right[nid]
            out[r] = nid
    return out_arr


def predict_batch(const int[::1] feature, const double[::1] threshold, const int[::1] left,
                  const int[::1] right, const double[::1] value, const double[:, ::1] X):
    """See _kernels_py.predict_batch."""
    cdef Py_ssize_t mrows = X.shape[0]
    out_arr = np.empty(mrows, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t r
    cdef int nid
    with nogil:
        for r in range(mrows):
            nid = 0
            while feature[nid] >= 0:
                if X[r, feature[nid]] <= threshold[nid]:
                    nid = left[nid]
                else:
                    nid = right[nid]
            out[r] = value[nid]
    return out_arr
