# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics mirror ``_pykernels`` exactly; see there."""

import numpy as np

cimport numpy as cnp
from libc.math cimport log, sqrt

cnp.import_array()

ctypedef cnp.int64_t idx_t


def build_tree(const double[:, ::1] X, const double[::1] y, Py_ssize_t n_min,
               Py_ssize_t max_features, const double[::1] u):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t cap = 2 * n + 1
    feature_a = np.full(cap, -1, dtype=np.int64)
    threshold_a = np.zeros(cap, dtype=np.float64)
    left_a = np.full(cap, -1, dtype=np.int64)
    right_a = np.full(cap, -1, dtype=np.int64)
    value_a = np.zeros(cap, dtype=np.float64)
    nsamp_a = np.zeros(cap, dtype=np.int64)
    idx_a = np.arange(n, dtype=np.int64)
    buf_a = np.empty(n, dtype=np.int64)
    feats_a = np.empty(d, dtype=np.int64)
    st_a = np.empty((cap, 3), dtype=np.int64)

    cdef idx_t[::1] feature = feature_a, left = left_a, right = right_a, nsamp = nsamp_a
    cdef double[::1] threshold = threshold_a, value = value_a
    cdef idx_t[::1] idx = idx_a, buf = buf_a, feats = feats_a
    cdef idx_t[:, ::1] st = st_a

    cdef Py_ssize_t n_u = u.shape[0], cur = 0
    cdef Py_ssize_t sp = 0, node_count = 1
    cdef Py_ssize_t node, s, e, m, k, j, r, f, tmp, n_valid, best_f, nl, nr, pl, pr
    cdef double ysum, ymin, ymax, yv, lo, hi, xv, cut, sl, sr, proxy, best_proxy, best_cut

    st[0, 0] = 0
    st[0, 1] = 0
    st[0, 2] = n
    sp = 1
    while sp > 0:
        sp -= 1
        node = st[sp, 0]
        s = st[sp, 1]
        e = st[sp, 2]
        m = e - s
        ysum = 0.0
        ymin = y[idx[s]]
        ymax = ymin
        for k in range(s, e):
            yv = y[idx[k]]
            ysum += yv
            if yv < ymin:
                ymin = yv
            if yv > ymax:
                ymax = yv
        value[node] = ysum / m
        nsamp[node] = m
        if m <= n_min or m < 2 or ymin == ymax:
            continue

        for j in range(d):
            feats[j] = j
        n_valid = 0
        j = 0
        best_f = -1
        best_proxy = 0.0
        best_cut = 0.0
        while n_valid < max_features and j < d:
            if cur >= n_u:
                raise RuntimeError("uniform stream exhausted")
            r = j + <Py_ssize_t>(u[cur] * (d - j))
            cur += 1
            if r >= d:
                r = d - 1
            tmp = feats[j]
            feats[j] = feats[r]
            feats[r] = tmp
            f = feats[j]
            j += 1
            lo = X[idx[s], f]
            hi = lo
            for k in range(s, e):
                xv = X[idx[k], f]
                if xv < lo:
                    lo = xv
                if xv > hi:
                    hi = xv
            if not hi > lo:
                continue
            if cur >= n_u:
                raise RuntimeError("uniform stream exhausted")
            cut = lo + u[cur] * (hi - lo)
            cur += 1
            if not (lo < cut and cut < hi):
                cut = lo + 0.5 * (hi - lo)
                if not (lo < cut and cut < hi):
                    continue
            n_valid += 1
            nl = 0
            sl = 0.0
            sr = 0.0
            for k in range(s, e):
                yv = y[idx[k]]
                if X[idx[k], f] <= cut:
                    nl += 1
                    sl += yv
                else:
                    sr += yv
            nr = m - nl
            proxy = sl * sl / nl + sr * sr / nr
            if best_f < 0 or proxy > best_proxy:
                best_f = f
                best_proxy = proxy
                best_cut = cut
        if best_f < 0:
            continue

        pl = s
        pr = 0
        for k in range(s, e):
            if X[idx[k], best_f] <= best_cut:
                idx[pl] = idx[k]
                pl += 1
            else:
                buf[pr] = idx[k]
                pr += 1
        for k in range(pr):
            idx[pl + k] = buf[k]

        feature[node] = best_f
        threshold[node] = best_cut
        left[node] = node_count
        right[node] = node_count + 1
        st[sp, 0] = node_count + 1
        st[sp, 1] = pl
        st[sp, 2] = e
        sp += 1
        st[sp, 0] = node_count
        st[sp, 1] = s
        st[sp, 2] = pl
        sp += 1
        node_count += 2

    return (feature_a[:node_count].copy(), threshold_a[:node_count].copy(),
            left_a[:node_count].copy(), right_a[:node_count].copy(),
            value_a[:node_count].copy(), nsamp_a[:node_count].copy())


def predict_forest(const idx_t[::1] feature, const double[::1] threshold,
                   const idx_t[::1] left, const idx_t[::1] right,
                   const double[::1] value, const idx_t[::1] offsets,
                   const double[:, ::1] X):
    cdef Py_ssize_t n_trees = offsets.shape[0] - 1, m = X.shape[0]
    out_a = np.empty((n_trees, m), dtype=np.float64)
    cdef double[:, ::1] out = out_a
    cdef Py_ssize_t b, i, base, node
    cdef idx_t f
    for b in range(n_trees):
        base = offsets[b]
        for i in range(m):
            node = 0
            f = feature[base]
            while f >= 0:
                if X[i, f] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
                f = feature[base + node]
            out[b, i] = value[base + node]
    return out_a


cdef double _subset_fit(const double[:, ::1] X, const idx_t* sub, Py_ssize_t k,
                        double* mu, double* L, double floor) except? -1.0:
    """Mean and floored ddof-0 covariance of X[sub]; Cholesky factor into L.
    Returns log-determinant."""
    cdef Py_ssize_t d = X.shape[1], a, b, c, i
    cdef double acc, logdet = 0.0
    for a in range(d):
        acc = 0.0
        for i in range(k):
            acc += X[sub[i], a]
        mu[a] = acc / k
    for a in range(d):
        for b in range(a + 1):
            acc = 0.0
            for i in range(k):
                acc += (X[sub[i], a] - mu[a]) * (X[sub[i], b] - mu[b])
            acc /= k
            if a == b:
                acc += floor
            L[a * d + b] = acc
    for a in range(d):
        for b in range(a + 1):
            acc = L[a * d + b]
            for c in range(b):
                acc -= L[a * d + c] * L[b * d + c]
            if a == b:
                if acc <= 0.0:
                    raise ValueError("covariance not positive definite")
                L[a * d + a] = sqrt(acc)
                logdet += 2.0 * log(L[a * d + a])
            else:
                L[a * d + b] = acc / L[b * d + b]
    return logdet


cdef inline bint _less(const double* key, idx_t a, idx_t b) noexcept nogil:
    return key[a] < key[b] or (key[a] == key[b] and a < b)


cdef void _select(const double* key, idx_t* order, Py_ssize_t n, Py_ssize_t h) noexcept nogil:
    """Partially order ``order`` so its first h entries are the h smallest
    under the total order (key, index)."""
    cdef Py_ssize_t lo = 0, hi = n - 1, i, j, mid
    cdef idx_t pivot, t
    while hi > lo:
        mid = lo + (hi - lo) // 2
        if _less(key, order[mid], order[lo]):
            t = order[mid]; order[mid] = order[lo]; order[lo] = t
        if _less(key, order[hi], order[lo]):
            t = order[hi]; order[hi] = order[lo]; order[lo] = t
        if _less(key, order[hi], order[mid]):
            t = order[hi]; order[hi] = order[mid]; order[mid] = t
        pivot = order[mid]
        i = lo
        j = hi
        while i <= j:
            while _less(key, order[i], pivot):
                i += 1
            while _less(key, pivot, order[j]):
                j -= 1
            if i <= j:
                t = order[i]; order[i] = order[j]; order[j] = t
                i += 1
                j -= 1
        if h - 1 <= j:
            hi = j
        elif h - 1 >= i:
            lo = i
        else:
            break


cdef double _csteps_core(const double[:, ::1] X, idx_t* cur, Py_ssize_t cur_len,
                         Py_ssize_t h, Py_ssize_t max_steps, double tol, double floor,
                         idx_t* new, idx_t* order, cnp.uint8_t* mark, double* d2,
                         double* mu, double* L, double* z, Py_ssize_t* steps) except? -1e300:
    """C-steps in place on ``cur`` (capacity >= h). Returns the log-determinant."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], i, a, c, step, k
    cdef double logdet, new_logdet, acc
    cdef bint same, was_h
    logdet = _subset_fit(X, cur, cur_len, mu, L, floor)
    step = 0
    while step < max_steps:
        for i in range(n):
            for a in range(d):
                acc = X[i, a] - mu[a]
                for c in range(a):
                    acc -= L[a * d + c] * z[c]
                z[a] = acc / L[a * d + a]
            acc = 0.0
            for a in range(d):
                acc += z[a] * z[a]
            d2[i] = acc
            order[i] = i
            mark[i] = 0
        _select(d2, order, n, h)
        for i in range(h):
            mark[order[i]] = 1
        k = 0
        for i in range(n):
            if mark[i]:
                new[k] = i
                k += 1
        step += 1
        was_h = cur_len == h
        same = was_h
        if same:
            for i in range(h):
                if cur[i] != new[i]:
                    same = False
                    break
        new_logdet = _subset_fit(X, new, h, mu, L, floor)
        for i in range(h):
            cur[i] = new[i]
        cur_len = h
        if same or (was_h and logdet - new_logdet <= tol):
            logdet = new_logdet
            break
        logdet = new_logdet
    steps[0] = step
    return logdet


cdef class _Work:
    cdef object arrays
    cdef idx_t* new
    cdef idx_t* order
    cdef cnp.uint8_t* mark
    cdef double* d2
    cdef double* mu
    cdef double* L
    cdef double* z

    def __cinit__(self, Py_ssize_t n, Py_ssize_t d):
        new_a = np.empty(n, dtype=np.int64)
        order_a = np.empty(n, dtype=np.int64)
        mark_a = np.zeros(n, dtype=np.uint8)
        d2_a = np.empty(n, dtype=np.float64)
        mu_a = np.empty(d, dtype=np.float64)
        L_a = np.zeros(d * d, dtype=np.float64)
        z_a = np.empty(d, dtype=np.float64)
        self.arrays = (new_a, order_a, mark_a, d2_a, mu_a, L_a, z_a)
        self.new = <idx_t*> cnp.PyArray_DATA(new_a)
        self.order = <idx_t*> cnp.PyArray_DATA(order_a)
        self.mark = <cnp.uint8_t*> cnp.PyArray_DATA(mark_a)
        self.d2 = <double*> cnp.PyArray_DATA(d2_a)
        self.mu = <double*> cnp.PyArray_DATA(mu_a)
        self.L = <double*> cnp.PyArray_DATA(L_a)
        self.z = <double*> cnp.PyArray_DATA(z_a)


def c_steps(const double[:, ::1] X, subset, Py_ssize_t h, Py_ssize_t max_steps,
            double tol, double floor):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], steps = 0
    sub = np.ascontiguousarray(subset, dtype=np.int64)
    cdef Py_ssize_t m = sub.shape[0]
    cur_a = np.empty(max(h, m), dtype=np.int64)
    cur_a[:m] = sub
    cdef idx_t[::1] cur = cur_a
    cdef _Work w = _Work(n, d)
    cdef double logdet = _csteps_core(X, &cur[0], m, h, max_steps, tol, floor, w.new, w.order,
                                      w.mark, w.d2, w.mu, w.L, w.z, &steps)
    return (cur_a[:h].copy() if steps > 0 else cur_a[:m].copy()), logdet, steps


def mcd_search(const double[:, ::1] X, starts, Py_ssize_t h, Py_ssize_t initial_steps,
               Py_ssize_t n_best, Py_ssize_t max_steps, double tol, double floor):
    """Run ``initial_steps`` C-steps from every row of ``starts``, carry the
    ``n_best`` lowest log-determinants (ties by start index) to convergence
    and return (support, logdet, winning start index)."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], steps = 0
    st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef Py_ssize_t n_starts = st.shape[0], m = st.shape[1], s, j, best_s = -1
    subs_a = np.empty((n_starts, max(h, m)), dtype=np.int64)
    subs_a[:, :m] = st
    lds_a = np.empty(n_starts, dtype=np.float64)
    cdef idx_t[:, ::1] subs = subs_a
    cdef double[::1] lds = lds_a
    cdef _Work w = _Work(n, d)
    cdef double ld, best_ld = 0.0
    for s in range(n_starts):
        lds[s] = _csteps_core(X, &subs[s, 0], m, h, initial_steps, tol, floor, w.new,
                              w.order, w.mark, w.d2, w.mu, w.L, w.z, &steps)
    rank = np.lexsort((np.arange(n_starts), lds_a))[:n_best]
    for j in range(rank.shape[0]):
        s = rank[j]
        ld = _csteps_core(X, &subs[s, 0], h, h, max_steps, tol, floor, w.new,
                          w.order, w.mark, w.d2, w.mu, w.L, w.z, &steps)
        if best_s < 0 or ld < best_ld or (ld == best_ld and s < best_s):
            best_ld = ld
            best_s = s
    return subs_a[best_s, :h].copy(), best_ld, best_s
