"""Compiled inner loops for batched WTA forward passes and weight updates.

Layer inputs come in two layouts. The first encoder layer sees dense
coordinates (``X`` of shape ``N x d_in``). Every later layer sees the
previous layer's WTA output, which has a single nonzero entry, so it is
carried as ``(idx, val)``: the winning index and its value.

All argmin scans use strict ``<`` so exact ties keep the lowest index.
"""
import numpy as np
from numba import njit


LANES = 16


@njit(cache=True)
def _lane_argmin(bm, bi):
    bj = bi[0]
    b = bm[0]
    for l in range(1, bm.shape[0]):
        if bm[l] < b or (bm[l] == b and bi[l] < bj):
            b = bm[l]
            bj = bi[l]
    return bj


@njit(cache=True)
def _scores_argmin(buf, bm, bi):
    # lane-split running minimum; each lane keeps its first (lowest) index
    d = buf.shape[0]
    L = bm.shape[0]
    for l in range(L):
        bm[l] = np.inf
        bi[l] = 0
    top = d - d % L
    for j0 in range(0, top, L):
        for l in range(L):
            s = buf[j0 + l]
            if s < bm[l]:
                bm[l] = s
                bi[l] = j0 + l
    for j in range(top, d):
        l = j - top
        if buf[j] < bm[l]:
            bm[l] = buf[j]
            bi[l] = j
    return _lane_argmin(bm, bi)


@njit(cache=True)
def dense_winners(X, W):
    """Nearest column (direct squared distance) and its ReLU dot product, per row of X."""
    N, d_in = X.shape
    d_out = W.shape[1]
    win = np.empty(N, dtype=np.int64)
    val = np.empty(N, dtype=np.float64)
    buf = np.empty(d_out)
    bm = np.empty(LANES)
    bi = np.empty(LANES, dtype=np.int64)
    for n in range(N):
        buf[:] = 0.0
        for i in range(d_in):
            xi = X[n, i]
            for j in range(d_out):
                t = xi - W[i, j]
                buf[j] += t * t
        bj = _scores_argmin(buf, bm, bi)
        dot = 0.0
        for i in range(d_in):
            dot += X[n, i] * W[i, bj]
        win[n] = bj
        val[n] = dot if dot > 0.0 else 0.0
    return win, val


@njit(cache=True)
def sparse_winners(idx, v, W, colsq):
    """Same as dense_winners for inputs v[n] * e_{idx[n]}.

    Squared distance minus the per-point constant v^2 is colsq[j] - 2 v W[w, j],
    so a zero input ties every column on colsq alone.
    """
    N = idx.shape[0]
    d_out = W.shape[1]
    win = np.empty(N, dtype=np.int64)
    val = np.empty(N, dtype=np.float64)
    L = LANES
    bm = np.empty(L)
    bi = np.empty(L, dtype=np.int64)
    top = d_out - d_out % L
    for n in range(N):
        w = idx[n]
        x2 = 2.0 * v[n]
        for l in range(L):
            bm[l] = np.inf
            bi[l] = 0
        for j0 in range(0, top, L):
            for l in range(L):
                s = colsq[j0 + l] - x2 * W[w, j0 + l]
                if s < bm[l]:
                    bm[l] = s
                    bi[l] = j0 + l
        for j in range(top, d_out):
            l = j - top
            s = colsq[j] - x2 * W[w, j]
            if s < bm[l]:
                bm[l] = s
                bi[l] = j
        bj = _lane_argmin(bm, bi)
        dot = v[n] * W[w, bj]
        win[n] = bj
        val[n] = dot if dot > 0.0 else 0.0
    return win, val


@njit(cache=True)
def dense_nearest_inputs(X, W):
    """For each column j, the lowest-index row of X closest to it."""
    N, d_in = X.shape
    d_out = W.shape[1]
    best = np.full(d_out, np.inf)
    arg = np.zeros(d_out, dtype=np.int64)
    buf = np.empty(d_out)
    for n in range(N):
        buf[:] = 0.0
        for i in range(d_in):
            xi = X[n, i]
            for j in range(d_out):
                t = xi - W[i, j]
                buf[j] += t * t
        for j in range(d_out):
            if buf[j] < best[j]:
                best[j] = buf[j]
                arg[j] = n
    return arg


@njit(cache=True)
def sparse_nearest_inputs(idx, v, W):
    """dense_nearest_inputs for one-hot inputs; scores drop the per-column constant."""
    N = idx.shape[0]
    d_out = W.shape[1]
    best = np.full(d_out, np.inf)
    arg = np.zeros(d_out, dtype=np.int64)
    for n in range(N):
        w = idx[n]
        x = v[n]
        for j in range(d_out):
            s = x * (x - 2.0 * W[w, j])
            if s < best[j]:
                best[j] = s
                arg[j] = n
    return arg


# kind codes shared with rules.py
HEBB, OJA, GROSSBERG = 0, 1, 2


@njit(cache=True)
def dense_baseline_pass(W, X, win, val, eta, kind):
    N, d_in = X.shape
    for n in range(N):
        j = win[n]
        y = val[n]
        if kind == HEBB:
            for i in range(d_in):
                W[i, j] += eta * y * X[n, i]
        elif kind == OJA:
            for i in range(d_in):
                W[i, j] += eta * y * (X[n, i] - y * W[i, j])
        else:
            for i in range(d_in):
                W[i, j] += eta * (X[n, i] - W[i, j])


@njit(cache=True)
def sparse_baseline_pass(W, idx, v, win, val, eta, kind):
    N = idx.shape[0]
    d_in = W.shape[0]
    for n in range(N):
        j = win[n]
        y = val[n]
        w = idx[n]
        x = v[n]
        if kind == HEBB:
            W[w, j] += eta * y * x
        elif kind == OJA:
            for i in range(d_in):
                xi = x if i == w else 0.0
                W[i, j] += eta * y * (xi - y * W[i, j])
        else:
            for i in range(d_in):
                xi = x if i == w else 0.0
                W[i, j] += eta * (xi - W[i, j])


@njit(cache=True)
def neaw_apply(W, X, idx, v, sparse, offsets, sign, eta):
    """Activity-aware update in place, one nearest-input term per segment.

    New column j is ``W0 - sum_c coef_c W0 + sum_c coef_c x_{k_c}`` where
    ``coef_c = sign[j] * eta / n_c`` and ``k_c`` is the point of segment c
    nearest to the entry value of column j. Columns with ``sign == 0`` are
    left untouched.
    """
    d_in, d_out = W.shape
    nseg = offsets.shape[0] - 1
    arg = np.empty((nseg, d_out), dtype=np.int64)
    for c in range(nseg):
        lo = offsets[c]
        hi = offsets[c + 1]
        if sparse:
            arg[c] = sparse_nearest_inputs(idx[lo:hi], v[lo:hi], W) + lo
        else:
            arg[c] = dense_nearest_inputs(X[lo:hi], W) + lo
    tot = np.zeros(d_out)
    for c in range(nseg):
        scale = eta / (offsets[c + 1] - offsets[c])
        for j in range(d_out):
            tot[j] += sign[j] * scale
    for i in range(d_in):
        for j in range(d_out):
            if sign[j] != 0.0:
                W[i, j] -= tot[j] * W[i, j]
    for c in range(nseg):
        scale = eta / (offsets[c + 1] - offsets[c])
        for j in range(d_out):
            if sign[j] == 0.0:
                continue
            k = arg[c, j]
            coef = sign[j] * scale
            if sparse:
                W[idx[k], j] += coef * v[k]
            else:
                for i in range(d_in):
                    W[i, j] += coef * X[k, i]


@njit(cache=True)
def adam_step(p, g, m, v, lr, b1, b2, c1, c2, eps):
    """Fused in-place Adam update on flat float64 views (same arithmetic order as the numpy form)."""
    for i in range(p.shape[0]):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
