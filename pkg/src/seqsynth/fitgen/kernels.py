"""CART inner loops: best-split search along one sorted feature and tree routing.

Each kernel has a numba version and a numpy version with the same arithmetic
order, so both paths pick identical splits. ``SEQSYNTH_DISABLE_NUMBA=1``
selects the numpy path.
"""

import numpy as np

from .._accel import HAVE_NUMBA, njit


def best_split_reg_numpy(xs, ys, min_leaf):
    n = xs.shape[0]
    if n < 2 * min_leaf:
        return 0.0, -1
    cs = np.cumsum(ys)
    cq = np.cumsum(ys * ys)
    tot, totq = cs[-1], cq[-1]
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    sl, ql = cs[:-1], cq[:-1]
    sr, qr = tot - sl, totq - ql
    parent = totq - tot * tot / n
    gain = parent - ((ql - sl * sl / nl) + (qr - sr * sr / nr))
    ok = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
    if not ok.any():
        return 0.0, -1
    gain = np.where(ok, gain, -np.inf)
    i = int(np.argmax(gain))
    return float(gain[i]), i


def best_split_cls_numpy(xs, yc, n_classes, min_leaf):
    n = xs.shape[0]
    if n < 2 * min_leaf:
        return 0.0, -1
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), yc] = 1.0
    cl = np.cumsum(onehot, axis=0)[:-1]
    tot = cl[-1] + onehot[-1]
    cr = tot - cl
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    parent = n - (tot * tot).sum() / n
    gl = nl - (cl * cl).sum(axis=1) / nl
    gr = nr - (cr * cr).sum(axis=1) / nr
    gain = parent - (gl + gr)
    ok = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
    if not ok.any():
        return 0.0, -1
    gain = np.where(ok, gain, -np.inf)
    i = int(np.argmax(gain))
    return float(gain[i]), i


def route_numpy(F, feature, threshold, left, right, catmask, is_cat):
    n = F.shape[0]
    node = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    while active.size:
        nd = node[active]
        f = feature[nd]
        leaf = f < 0
        active, nd, f = active[~leaf], nd[~leaf], f[~leaf]
        if not active.size:
            break
        x = F[active, f]
        cat = is_cat[nd]
        go_left = np.empty(active.size, dtype=bool)
        go_left[~cat] = x[~cat] <= threshold[nd[~cat]]
        if cat.any():
            codes = x[cat].astype(np.int64)
            go_left[cat] = catmask[nd[cat], codes]
        node[active] = np.where(go_left, left[nd], right[nd])
    return node


@njit(cache=True)
def best_split_reg_numba(xs, ys, min_leaf):
    n = xs.shape[0]
    if n < 2 * min_leaf:
        return 0.0, -1
    tot = 0.0
    totq = 0.0
    for i in range(n):
        tot += ys[i]
        totq += ys[i] * ys[i]
    parent = totq - tot * tot / n
    best = -np.inf
    pos = -1
    sl = 0.0
    ql = 0.0
    for i in range(n - 1):
        sl += ys[i]
        ql += ys[i] * ys[i]
        nl = i + 1.0
        nr = n - nl
        if nl < min_leaf or nr < min_leaf or not (xs[i] < xs[i + 1]):
            continue
        sr = tot - sl
        qr = totq - ql
        g = parent - ((ql - sl * sl / nl) + (qr - sr * sr / nr))
        if g > best:
            best = g
            pos = i
    if pos < 0:
        return 0.0, -1
    return best, pos


@njit(cache=True)
def best_split_cls_numba(xs, yc, n_classes, min_leaf):
    n = xs.shape[0]
    if n < 2 * min_leaf:
        return 0.0, -1
    tot = np.zeros(n_classes)
    for i in range(n):
        tot[yc[i]] += 1.0
    s = 0.0
    for c in range(n_classes):
        s += tot[c] * tot[c]
    parent = n - s / n
    cl = np.zeros(n_classes)
    best = -np.inf
    pos = -1
    for i in range(n - 1):
        cl[yc[i]] += 1.0
        nl = i + 1.0
        nr = n - nl
        if nl < min_leaf or nr < min_leaf or not (xs[i] < xs[i + 1]):
            continue
        sl = 0.0
        sr = 0.0
        for c in range(n_classes):
            sl += cl[c] * cl[c]
            r = tot[c] - cl[c]
            sr += r * r
        g = parent - ((nl - sl / nl) + (nr - sr / nr))
        if g > best:
            best = g
            pos = i
    if pos < 0:
        return 0.0, -1
    return best, pos


@njit(cache=True)
def route_numba(F, feature, threshold, left, right, catmask, is_cat):
    n = F.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        nd = 0
        while feature[nd] >= 0:
            x = F[i, feature[nd]]
            if is_cat[nd]:
                go_left = catmask[nd, int(x)]
            else:
                go_left = x <= threshold[nd]
            nd = left[nd] if go_left else right[nd]
        out[i] = nd
    return out


if HAVE_NUMBA:
    best_split_reg = best_split_reg_numba
    best_split_cls = best_split_cls_numba
    route = route_numba
else:
    best_split_reg = best_split_reg_numpy
    best_split_cls = best_split_cls_numpy
    route = route_numpy
