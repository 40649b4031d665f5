"""Pure-Python/numpy reference versions of the compiled kernels.

Both backends consume the same inputs (including the pre-drawn uniform stream
for tree growth) in the same order, so they grow the same trees and pick the
same MCD subsets; only floating-point summation order differs.
"""

from __future__ import annotations

import numpy as np


def build_tree(X, y, n_min, max_features, u):
    """Grow one extremely randomized regression tree on all of ``X``.

    Nodes are numbered in creation order, children in pairs (left, right),
    and expanded depth-first left-to-right. A node becomes a leaf when it
    holds ``<= n_min`` samples, is pure, or no sampled feature varies.
    At each split, features are drawn by a partial Fisher-Yates shuffle
    (one uniform each) until ``max_features`` non-constant ones are found;
    each gets one uniform cut inside its local (min, max). The cut with the
    largest ``S_L^2/n_L + S_R^2/n_R`` (equivalently the smallest within-node
    squared error) wins; ties keep the earlier draw.
    """
    n, d = X.shape
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    nsamp = np.zeros(cap, dtype=np.int64)
    cur = 0
    node_count = 1
    stack = [(0, np.arange(n))]
    while stack:
        node, idx = stack.pop()
        ys = y[idx]
        m = len(idx)
        value[node] = ys.sum() / m
        nsamp[node] = m
        if m <= n_min or m < 2 or ys.min() == ys.max():
            continue
        feats = list(range(d))
        n_valid = j = 0
        best = None
        while n_valid < max_features and j < d:
            if cur >= len(u):
                raise RuntimeError("uniform stream exhausted")
            r = min(j + int(u[cur] * (d - j)), d - 1)
            cur += 1
            feats[j], feats[r] = feats[r], feats[j]
            f = feats[j]
            j += 1
            col = X[idx, f]
            lo, hi = col.min(), col.max()
            if not hi > lo:
                continue
            if cur >= len(u):
                raise RuntimeError("uniform stream exhausted")
            cut = lo + u[cur] * (hi - lo)
            cur += 1
            if not lo < cut < hi:
                cut = lo + 0.5 * (hi - lo)
                if not lo < cut < hi:
                    continue
            n_valid += 1
            mask = col <= cut
            nl = int(mask.sum())
            sl = ys[mask].sum()
            sr = ys[~mask].sum()
            proxy = sl * sl / nl + sr * sr / (m - nl)
            if best is None or proxy > best[0]:
                best = (proxy, f, cut, mask)
        if best is None:
            continue
        _, f, cut, mask = best
        feature[node] = f
        threshold[node] = cut
        left[node] = node_count
        right[node] = node_count + 1
        stack.append((node_count + 1, idx[~mask]))
        stack.append((node_count, idx[mask]))
        node_count += 2
    k = node_count
    return (feature[:k].copy(), threshold[:k].copy(), left[:k].copy(),
            right[:k].copy(), value[:k].copy(), nsamp[:k].copy())


def predict_forest(feature, threshold, left, right, value, offsets, X):
    """Per-tree predictions, shape (n_trees, n_samples)."""
    n_trees = len(offsets) - 1
    m = X.shape[0]
    out = np.empty((n_trees, m))
    for b in range(n_trees):
        base = offsets[b]
        node = np.zeros(m, dtype=np.int64)
        active = feature[base + node] >= 0
        while active.any():
            nid = base + node[active]
            go_left = X[active, feature[nid]] <= threshold[nid]
            node[active] = np.where(go_left, left[nid], right[nid])
            active = feature[base + node] >= 0
        out[b] = value[base + node]
    return out


def _subset_fit(X, sub, floor):
    pts = X[sub]
    mu = pts.mean(axis=0)
    diff = pts - mu
    cov = diff.T @ diff / len(sub) + floor * np.eye(X.shape[1])
    chol = np.linalg.cholesky(cov)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return mu, chol, logdet


def c_steps(X, subset, h, max_steps, tol, floor):
    """Concentration steps: refit on the ``h`` points closest (Mahalanobis)
    to the current fit until the subset repeats, the log-determinant stops
    decreasing by more than ``tol``, or ``max_steps`` is reached.

    Returns (sorted subset, log-determinant of its floored covariance, steps).
    """
    n = X.shape[0]
    cur = np.asarray(subset, dtype=np.int64)
    mu, chol, logdet = _subset_fit(X, cur, floor)
    step = 0
    while step < max_steps:
        z = np.linalg.solve(chol, (X - mu).T)
        d2 = (z * z).sum(axis=0)
        new = np.sort(np.lexsort((np.arange(n), d2))[:h])
        step += 1
        was_h = len(cur) == h
        same = was_h and np.array_equal(cur, new)
        mu, chol, new_logdet = _subset_fit(X, new, floor)
        cur = new
        if same or (was_h and logdet - new_logdet <= tol):
            logdet = new_logdet
            break
        logdet = new_logdet
    return cur, float(logdet), step


def mcd_search(X, starts, h, initial_steps, n_best, max_steps, tol, floor):
    """Run ``initial_steps`` C-steps from every row of ``starts``, carry the
    ``n_best`` lowest log-determinants (ties by start index) to convergence
    and return (support, logdet, winning start index)."""
    trial = [c_steps(X, s, h, initial_steps, tol, floor)[:2] for s in starts]
    lds = np.array([t[1] for t in trial])
    rank = np.lexsort((np.arange(len(trial)), lds))[:n_best]
    best = None
    for s in rank:
        sub, ld, _ = c_steps(X, trial[s][0], h, max_steps, tol, floor)
        if best is None or (ld, s) < (best[1], best[2]):
            best = (sub, ld, int(s))
    return best[0], float(best[1]), best[2]
