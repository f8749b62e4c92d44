"""Hot numeric kernels: numba-compiled fast path plus a pure-numpy fallback.

The backend is picked once at import time from the ``ASRROUTE_BACKEND``
environment variable: ``numpy`` forces the fallback, anything else (or the
variable being unset) uses numba when it is importable.  Both backends run
the same arithmetic in the same order, so models and metrics computed on
either path agree bit-for-bit; ``benchmarks/bench_kernels.py`` compares
their speed.

Kernels:
  * ``edit_distance``  - unit-cost Levenshtein distance over token-id arrays
  * ``scan_splits``    - one boosting level of exact greedy split search
  * ``predict_margin`` - additive margin of a packed tree ensemble
"""

from __future__ import annotations

import os

import numpy as np


def _numba_njit():
    try:
        from numba import njit
    except ImportError:
        return None
    return njit


_requested = os.environ.get("ASRROUTE_BACKEND", "").strip().lower()
_njit = None if _requested == "numpy" else _numba_njit()
BACKEND = "numba" if _njit is not None else "numpy"


# --------------------------------------------------------------------------
# loop implementations (compiled under numba)
# --------------------------------------------------------------------------

def _edit_distance_loop(ref_ids, hyp_ids):
    n = ref_ids.shape[0]
    m = hyp_ids.shape[0]
    prev = np.arange(m + 1, dtype=np.int64)
    cur = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        a = ref_ids[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] if a == hyp_ids[j - 1] else prev[j - 1] + 1
            dele = prev[j] + 1
            ins = cur[j - 1] + 1
            best = sub
            if dele < best:
                best = dele
            if ins < best:
                best = ins
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


def _scan_splits_loop(order, sorted_vals, g, h, node_of_row, node_g, node_h,
                      feat_ids, lam, min_child_h,
                      best_gain, best_feat, best_thr, best_gl, best_hl):
    """Find the best split per active node across ``feat_ids``.

    ``order[j]`` holds row indices sorted by feature j and ``sorted_vals[j]``
    the matching feature values, both computed once per fit so the scan
    reads values sequentially.  ``node_of_row[i]`` is the node slot of row
    i at the current level, or -1 if the row is inactive.  Best-so-far
    arrays are updated in place; ties keep the earliest candidate in
    (feature, position) scan order, which makes the search deterministic.
    """
    n = order.shape[1]
    k = node_g.shape[0]
    run_g = np.zeros(k, dtype=np.float64)
    run_h = np.zeros(k, dtype=np.float64)
    cnt = np.zeros(k, dtype=np.int64)
    last = np.zeros(k, dtype=np.float64)
    for jj in range(feat_ids.shape[0]):
        j = feat_ids[jj]
        for t in range(k):
            run_g[t] = 0.0
            run_h[t] = 0.0
            cnt[t] = 0
        for pos in range(n):
            i = order[j, pos]
            nd = node_of_row[i]
            if nd < 0:
                continue
            v = sorted_vals[j, pos]
            if cnt[nd] > 0 and v != last[nd]:
                thr = 0.5 * (last[nd] + v)
                # a midpoint that rounds onto the lower value cannot
                # separate the two rows; skip it
                if thr > last[nd]:
                    gl = run_g[nd]
                    hl = run_h[nd]
                    gr = node_g[nd] - gl
                    hr = node_h[nd] - hl
                    if hl >= min_child_h and hr >= min_child_h:
                        gain = 0.5 * (gl * gl / (hl + lam)
                                      + gr * gr / (hr + lam)
                                      - (gl + gr) * (gl + gr) / (hl + hr + lam))
                        if gain > best_gain[nd]:
                            best_gain[nd] = gain
                            best_feat[nd] = j
                            best_thr[nd] = thr
                            best_gl[nd] = gl
                            best_hl[nd] = hl
            run_g[nd] += g[i]
            run_h[nd] += h[i]
            cnt[nd] += 1
            last[nd] = v


def _predict_margin_loop(feat, thr, left, right, default_left, value, roots,
                         X, learning_rate, base, out):
    n = X.shape[0]
    n_trees = roots.shape[0]
    for i in range(n):
        m = base
        for t in range(n_trees):
            node = roots[t]
            while feat[node] >= 0:
                v = X[i, feat[node]]
                if v != v:  # NaN routes along the stored default direction
                    node = left[node] if default_left[node] == 1 else right[node]
                elif v < thr[node]:
                    node = left[node]
                else:
                    node = right[node]
            m += learning_rate * value[node]
        out[i] = m


# --------------------------------------------------------------------------
# vectorized numpy fallbacks
# --------------------------------------------------------------------------

def _edit_distance_np(ref_ids, hyp_ids):
    # short token sequences; the plain two-row DP is fast enough here
    n = ref_ids.shape[0]
    m = hyp_ids.shape[0]
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        a = ref_ids[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if a == hyp_ids[j - 1] else 1)
            cur[j] = min(sub, prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[m]


def _scan_splits_np(order, sorted_vals, g, h, node_of_row, node_g, node_h,
                    feat_ids, lam, min_child_h,
                    best_gain, best_feat, best_thr, best_gl, best_hl):
    # mirrors _scan_splits_loop; per-node prefix sums are taken over fresh
    # slices so the addition order (and hence every float) matches the
    # numba path exactly
    for j in feat_ids:
        rows = order[j]
        nd = node_of_row[rows]
        keep = nd >= 0
        rows = rows[keep]
        nd = nd[keep]
        if rows.size == 0:
            continue
        vals = sorted_vals[j][keep]
        grp = np.argsort(nd, kind="stable")
        rows = rows[grp]
        nd = nd[grp]
        vals = vals[grp]
        seg_starts = np.flatnonzero(np.r_[True, nd[1:] != nd[:-1]])
        seg_ends = np.r_[seg_starts[1:], nd.size]
        for s, e in zip(seg_starts, seg_ends):
            t = nd[s]
            if e - s < 2:
                continue
            v = vals[s:e]
            cg = np.cumsum(g[rows[s:e]])
            ch = np.cumsum(h[rows[s:e]])
            change = v[1:] != v[:-1]
            if not change.any():
                continue
            pos = np.flatnonzero(change)  # split between pos and pos+1
            thr = 0.5 * (v[pos] + v[pos + 1])
            gl = cg[pos]
            hl = ch[pos]
            gr = node_g[t] - gl
            hr = node_h[t] - hl
            ok = (thr > v[pos]) & (hl >= min_child_h) & (hr >= min_child_h)
            if not ok.any():
                continue
            gain = 0.5 * (gl * gl / (hl + lam)
                          + gr * gr / (hr + lam)
                          - (gl + gr) * (gl + gr) / (hl + hr + lam))
            gain = np.where(ok, gain, -np.inf)
            b = int(np.argmax(gain))
            if gain[b] > best_gain[t]:
                best_gain[t] = gain[b]
                best_feat[t] = j
                best_thr[t] = thr[b]
                best_gl[t] = gl[b]
                best_hl[t] = hl[b]


def _predict_margin_np(feat, thr, left, right, default_left, value, roots,
                       X, learning_rate, base, out):
    n = X.shape[0]
    idx = np.arange(n)
    out[:] = base
    for t in roots:
        node = np.full(n, t, dtype=np.int64)
        active = feat[node] >= 0
        while active.any():
            a = idx[active]
            f = feat[node[a]]
            v = X[a, f]
            go_left = np.where(np.isnan(v), default_left[node[a]] == 1,
                               v < thr[node[a]])
            node[a] = np.where(go_left, left[node[a]], right[node[a]])
            active = feat[node] >= 0
        out += learning_rate * value[node]


# --------------------------------------------------------------------------
# backend selection
# --------------------------------------------------------------------------

_NUMPY_IMPL = {
    "edit_distance": _edit_distance_np,
    "scan_splits": _scan_splits_np,
    "predict_margin": _predict_margin_np,
}

_numba_cache: dict | None = None


def load_backend(name: str) -> dict:
    """Return the kernel table for ``name`` ("numba" or "numpy").

    Used by the benchmark script to time both paths in one process.
    """
    global _numba_cache
    if name == "numpy":
        return dict(_NUMPY_IMPL)
    if name == "numba":
        njit = _numba_njit()
        if njit is None:
            raise ImportError("numba is not installed")
        if _numba_cache is None:
            _numba_cache = {
                "edit_distance": njit(cache=True)(_edit_distance_loop),
                "scan_splits": njit(cache=True)(_scan_splits_loop),
                "predict_margin": njit(cache=True)(_predict_margin_loop),
            }
        return dict(_numba_cache)
    raise ValueError(f"unknown kernel backend: {name!r}")


_active = load_backend(BACKEND)
edit_distance = _active["edit_distance"]
scan_splits = _active["scan_splits"]
predict_margin = _active["predict_margin"]
