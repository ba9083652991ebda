"""Binary recursive partitioning with leaf-donor generation."""

from __future__ import annotations

import numpy as np

from ..tabular import DesignMatrix
from . import kernels
from .base import CartControls, FittedGenerator, MethodSpec, bandwidth


def _class_order(y, codes, n_levels, classify, n_classes):
    """Rank the levels present in a node by outcome mean (continuous y) or by
    the share of the node's most frequent class (categorical y)."""
    present = np.unique(codes)
    if classify:
        major = np.bincount(y, minlength=n_classes).argmax()
        score = np.array([np.mean(y[codes == c] == major) for c in present])
    else:
        score = np.array([y[codes == c].mean() for c in present])
    order = present[np.argsort(score, kind="stable")]
    rank = np.full(n_levels, -1, dtype=np.int64)
    rank[order] = np.arange(order.size)
    return order, rank


def _impurity(y, classify, n_classes):
    if classify:
        c = np.bincount(y, minlength=n_classes).astype(np.float64)
        return y.size - (c * c).sum() / y.size
    return float(((y - y.mean()) ** 2).sum())


def fit_cart(y, X: DesignMatrix, controls: CartControls | None = None, categorical: bool = False,
             method: MethodSpec | None = None) -> FittedGenerator:
    """Grow a CART tree of ``y`` on the raw predictor features of ``X``.

    Split criterion is Gini reduction (categorical ``y``, given as level codes)
    or SSE reduction (continuous ``y``). Improvement is measured relative to
    the root impurity. Each leaf keeps its donor rows.
    """
    controls = controls or (method.cart_controls if method else CartControls())
    method = method or MethodSpec("cart", cart_controls=controls)
    y = np.asarray(y)
    n = y.size
    if n != X.rows:
        raise ValueError("y and X differ in length")
    F = np.asarray(X.features, dtype=np.float64)
    levels = np.asarray(X.feature_levels, dtype=np.int64)
    if categorical:
        yc = y.astype(np.int64)
        n_classes = int(yc.max()) + 1 if n else 1
        ycont = None
    else:
        yc = None
        n_classes = 0
        ycont = y.astype(np.float64)
    width = max(1, int(levels.max()) if levels.size else 1)
    ml = controls.min_leaf_size

    feature, threshold, left, right, is_cat, masks = [], [], [], [], [], []
    leaves = {}

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        is_cat.append(False)
        masks.append(np.zeros(width, dtype=bool))
        return len(feature) - 1

    yt = yc if categorical else ycont
    root_imp = _impurity(yt, categorical, n_classes) if n else 0.0
    stack = [(new_node(), np.arange(n), 0)]
    while stack:
        node, rows, depth = stack.pop()
        yn = yt[rows]
        if (rows.size < 2 * ml or depth >= controls.max_depth or root_imp <= 0
                or _impurity(yn, categorical, n_classes) <= 0):
            leaves[node] = rows
            continue
        best = (-np.inf, None)
        for j in range(F.shape[1]):
            x = F[rows, j]
            if levels[j] > 0:
                codes = x.astype(np.int64)
                order, rank = _class_order(yn, codes, levels[j], categorical, n_classes)
                if order.size < 2:
                    continue
                key = rank[codes].astype(np.float64)
            else:
                key = x
            srt = np.argsort(key, kind="stable")
            xs = np.ascontiguousarray(key[srt])
            if categorical:
                g, pos = kernels.best_split_cls(xs, np.ascontiguousarray(yn[srt]), n_classes, ml)
            else:
                g, pos = kernels.best_split_reg(xs, np.ascontiguousarray(yn[srt]), ml)
            if pos >= 0 and g > best[0]:
                if levels[j] > 0:
                    mask = np.zeros(width, dtype=bool)
                    mask[order[: int(xs[pos]) + 1]] = True
                    split = (j, 0.0, True, mask)
                else:
                    lo, hi = xs[pos], xs[pos + 1]
                    thr = lo + (hi - lo) / 2
                    if not (lo <= thr < hi):
                        thr = lo
                    split = (j, thr, False, None)
                best = (g, split)
        gain, split = best
        if split is None or gain / root_imp < controls.min_split_improvement:
            leaves[node] = rows
            continue
        j, thr, cat, mask = split
        x = F[rows, j]
        if cat:
            codes = x.astype(np.int64)
            go_left = mask[codes]
            seen = np.zeros(width, dtype=bool)
            seen[np.unique(codes)] = True
            # unseen levels follow the larger child
            if go_left.sum() >= rows.size - go_left.sum():
                mask = mask | ~seen
            masks[node] = mask
        else:
            go_left = x <= thr
        feature[node] = j
        threshold[node] = thr
        is_cat[node] = cat
        ln, rn = new_node(), new_node()
        left[node], right[node] = ln, rn
        stack.append((rn, rows[~go_left], depth + 1))
        stack.append((ln, rows[go_left], depth + 1))

    leaf_ids = np.array(sorted(leaves), dtype=np.int64)
    counts = np.array([leaves[i].size for i in leaf_ids], dtype=np.int64)
    leaf_rows = np.concatenate([leaves[i] for i in leaf_ids]) if leaf_ids.size else np.empty(0, np.int64)
    leaf_index = np.full(len(feature), -1, dtype=np.int64)
    leaf_index[leaf_ids] = np.arange(leaf_ids.size)
    params = {
        "feature": np.array(feature, dtype=np.int64),
        "threshold": np.array(threshold, dtype=np.float64),
        "left": np.array(left, dtype=np.int64),
        "right": np.array(right, dtype=np.int64),
        "is_cat": np.array(is_cat, dtype=bool),
        "catmask": np.array(masks, dtype=bool).reshape(len(feature), width),
        "leaf_index": leaf_index,
        "offsets": np.concatenate([[0], np.cumsum(counts)]),
        "leaf_rows": leaf_rows,
        "donors": y[leaf_rows],
        "categorical": categorical,
        "n_features": F.shape[1],
    }
    return FittedGenerator(method, params, data=(y, X))


def tree_depth(params) -> int:
    left, right, feature = params["left"], params["right"], params["feature"]
    depth = np.zeros(len(feature), dtype=np.int64)
    best = 0
    for nd in range(len(feature)):
        if feature[nd] >= 0:
            depth[left[nd]] = depth[right[nd]] = depth[nd] + 1
            best = max(best, depth[nd] + 1)
    return best


def apply_tree(params, X: DesignMatrix) -> np.ndarray:
    """Leaf number (0-based, in leaf order) for each row of ``X``."""
    F = np.ascontiguousarray(X.features, dtype=np.float64)
    if F.shape[1] != params["n_features"]:
        raise ValueError("predictor features do not match the fitted tree")
    nodes = kernels.route(F, params["feature"], params["threshold"], params["left"],
                          params["right"], params["catmask"], params["is_cat"])
    return params["leaf_index"][nodes]


def cart_generate(fit: FittedGenerator, Xnew: DesignMatrix, rng, smoothing: bool | None = None) -> np.ndarray:
    """Route rows to leaves and emit a uniformly drawn donor from each leaf."""
    p = fit.active
    smoothing = fit.method.smoothing if smoothing is None else smoothing
    leaf = apply_tree(p, Xnew)
    off = p["offsets"]
    cnt = off[1:] - off[:-1]
    pick = off[leaf] + np.floor(rng.random(leaf.size) * cnt[leaf]).astype(np.int64)
    out = p["donors"][pick]
    if smoothing and not p["categorical"]:
        bw = np.array([bandwidth(p["donors"][off[i]:off[i + 1]]) for i in range(cnt.size)])
        out = out + bw[leaf] * rng.standard_normal(leaf.size)
    return out
