"""Compiled inner loops for survival-tree growth and routing."""

import numpy as np
from numba import njit


@njit(cache=True)
def _node_km(idx, start, end, time, event, out_times, out_probs, pos):
    """Kaplan-Meier curve of idx[start:end]; appends jump points at ``pos``."""
    n = end - start
    t = np.empty(n)
    e = np.empty(n, np.bool_)
    for i in range(n):
        t[i] = time[idx[start + i]]
        e[i] = event[idx[start + i]]
    order = np.argsort(t, kind="mergesort")
    at_risk = n
    s = 1.0
    i = 0
    while i < n:
        ti = t[order[i]]
        d = 0
        c = 0
        while i < n and t[order[i]] == ti:
            if e[order[i]]:
                d += 1
            c += 1
            i += 1
        if d > 0:
            s = s * (1.0 - d / at_risk)
            out_times[pos] = ti
            out_probs[pos] = s
            pos += 1
        at_risk -= c
    return pos


@njit(cache=True)
def _risk_tables(time, event):
    """Per-record event-time rank plus at-risk/death counts per distinct event time."""
    n = time.size
    n_ev = 0
    for r in range(n):
        if event[r]:
            n_ev += 1
    ev_times = np.empty(n_ev)
    k = 0
    for r in range(n):
        if event[r]:
            ev_times[k] = time[r]
            k += 1
    ev_times = np.unique(ev_times)
    m = ev_times.size
    # rank[r] = number of distinct event times <= time[r]
    rank = np.searchsorted(ev_times, time, side="right")
    at_risk = np.zeros(m)
    deaths = np.zeros(m)
    for r in range(n):
        for j in range(rank[r]):
            at_risk[j] += 1.0
        if event[r]:
            deaths[rank[r] - 1] += 1.0
    return rank, at_risk, deaths


@njit(cache=True)
def _scan(values, order, rank, event, at_risk, deaths, min_leaf, scores, left_risk):
    """Fill ``scores[pos]`` with the log-rank chi2 of putting order[:pos+1] left.

    O - E and the hypergeometric variance are updated as each record moves to
    the left group, touching only the event times at which it is at risk.
    """
    n = values.size
    m = at_risk.size
    for j in range(m):
        left_risk[j] = 0.0
    # hazard_prefix[k] = sum_{j<k} d_j / n_j ; coef_j = d_j (n_j - d_j) / (n_j^2 (n_j - 1))
    hazard_prefix = np.zeros(m + 1)
    coef = np.zeros(m)
    for j in range(m):
        nj = at_risk[j]
        dj = deaths[j]
        hazard_prefix[j + 1] = hazard_prefix[j] + dj / nj
        if nj > 1.0:
            coef[j] = dj * (nj - dj) / (nj * nj * (nj - 1.0))
    oe = 0.0
    var = 0.0
    for pos in range(n - 1):
        scores[pos] = -1.0
    for pos in range(n - 1):
        r = order[pos]
        k = rank[r]
        for j in range(k):
            var += coef[j] * (at_risk[j] - 1.0 - 2.0 * left_risk[j])
            left_risk[j] += 1.0
        oe -= hazard_prefix[k]
        if event[r]:
            oe += 1.0
        n_left = pos + 1
        if n_left < min_leaf:
            continue
        if n - n_left < min_leaf:
            break
        if values[order[pos]] == values[order[pos + 1]]:
            continue
        # a true positive variance is at least ~1/n; smaller values are rounding noise
        if var > 1e-9:
            scores[pos] = oe * oe / var


def logrank_scan(values, time, event, min_leaf):
    """Log-rank chi2 of every split ``values <= v`` vs ``values > v``.

    Returns (sorted order, chi2 per split position); position i puts the
    first i+1 sorted records on the left. Illegal positions get -1.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    time = np.ascontiguousarray(time, dtype=np.float64)
    event = np.ascontiguousarray(event, dtype=np.bool_)
    order = np.argsort(values, kind="mergesort")
    scores = np.full(max(values.size - 1, 0), -1.0)
    if values.size < 2 or not event.any():
        return order, scores
    rank, at_risk, deaths = _risk_tables(time, event)
    _scan(values, order, rank, event, at_risk, deaths, min_leaf, scores, np.empty(at_risk.size))
    return order, scores


@njit(cache=True)
def grow_tree(X, time, event, inbag, feat_keys, mtry, min_split, min_leaf, max_depth):
    n = inbag.size
    max_nodes = 2 * n
    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    leaf = np.full(max_nodes, -1, np.int64)
    start = np.zeros(max_nodes, np.int64)
    end = np.zeros(max_nodes, np.int64)
    depth = np.zeros(max_nodes, np.int64)
    leaf_offsets = np.zeros(n + 1, np.int64)
    curve_times = np.empty(n)
    curve_probs = np.empty(n)

    idx = inbag.copy()
    buf = np.empty(n, np.int64)
    stack = np.empty(max_nodes, np.int64)
    end[0] = n
    n_nodes = 1
    n_leaves = 0
    curve_pos = 0
    sp = 0
    stack[sp] = 0
    sp += 1
    key_row = 0

    while sp > 0:
        sp -= 1
        node = stack[sp]
        s = start[node]
        e = end[node]
        size = e - s

        best_score = -1.0
        best_feat = -1
        best_thr = 0.0
        n_ev = 0
        for i in range(s, e):
            if event[idx[i]]:
                n_ev += 1
        can_split = size >= min_split and n_ev > 0
        if max_depth > 0 and depth[node] >= max_depth:
            can_split = False

        if can_split:
            node_t = np.empty(size)
            node_e = np.empty(size, np.bool_)
            for i in range(size):
                node_t[i] = time[idx[s + i]]
                node_e[i] = event[idx[s + i]]
            rank, at_risk, deaths = _risk_tables(node_t, node_e)
            left_risk = np.empty(at_risk.size)
            scores = np.empty(size - 1)
            feats = np.argsort(feat_keys[key_row])[:mtry]
            key_row += 1
            vals = np.empty(size)
            for f in feats:
                for i in range(size):
                    vals[i] = X[idx[s + i], f]
                order = np.argsort(vals, kind="mergesort")
                _scan(vals, order, rank, node_e, at_risk, deaths, min_leaf, scores, left_risk)
                for pos in range(size - 1):
                    if scores[pos] > best_score:
                        best_score = scores[pos]
                        best_feat = f
                        lo = vals[order[pos]]
                        hi = vals[order[pos + 1]]
                        thr = 0.5 * (lo + hi)
                        if thr >= hi:
                            thr = lo
                        best_thr = thr

        if best_feat < 0:
            leaf[node] = n_leaves
            leaf_offsets[n_leaves] = curve_pos
            curve_pos = _node_km(idx, s, e, time, event, curve_times, curve_probs, curve_pos)
            n_leaves += 1
            leaf_offsets[n_leaves] = curve_pos
            continue

        # stable partition of idx[s:e] on X[:, best_feat] <= best_thr
        nl = 0
        for i in range(s, e):
            if X[idx[i], best_feat] <= best_thr:
                buf[nl] = idx[i]
                nl += 1
        nr = nl
        for i in range(s, e):
            if X[idx[i], best_feat] > best_thr:
                buf[nr] = idx[i]
                nr += 1
        for i in range(size):
            idx[s + i] = buf[i]

        feature[node] = best_feat
        threshold[node] = best_thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        start[lc] = s
        end[lc] = s + nl
        start[rc] = s + nl
        end[rc] = e
        depth[lc] = depth[node] + 1
        depth[rc] = depth[node] + 1
        stack[sp] = rc
        sp += 1
        stack[sp] = lc
        sp += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        leaf[:n_nodes].copy(),
        leaf_offsets[: n_leaves + 1].copy(),
        curve_times[:curve_pos].copy(),
        curve_probs[:curve_pos].copy(),
    )


@njit(cache=True)
def apply_tree(X, feature, threshold, left, right, leaf):
    out = np.empty(X.shape[0], np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = leaf[node]
    return out


@njit(cache=True)
def leaf_rmst(offsets, times, probs, t_max):
    n_leaves = offsets.size - 1
    out = np.empty(n_leaves)
    for k in range(n_leaves):
        area = 0.0
        prev_t = 0.0
        prev_s = 1.0
        for j in range(offsets[k], offsets[k + 1]):
            if times[j] >= t_max:
                break
            area += prev_s * (times[j] - prev_t)
            prev_t = times[j]
            prev_s = probs[j]
        area += prev_s * (t_max - prev_t)
        out[k] = area
    return out
