"""Regression forests with out-of-bag prediction."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import FloatArray, TooFewRows, ValidationError, child_seed
from ._parallel import parallel_map


@njit(cache=True, nogil=True)
def _grow_tree(X, y, sample, mtry, min_leaf, seed):
    """Grow one tree on the in-bag rows ``sample`` (with repeats).

    Returns node arrays (feature, threshold, left, right, value); leaves have
    feature == -1.
    """
    np.random.seed(seed)
    n_in = sample.shape[0]
    d = X.shape[1]
    cap = 2 * (n_in // max(min_leaf, 1)) + 3
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)

    order = sample.copy()
    # stack of (node, start, stop) over ``order``
    stack = np.empty((cap, 3), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n_in
    top = 1
    n_nodes = 1
    feats = np.arange(d)
    xs = np.empty(n_in)
    ys = np.empty(n_in)
    while top > 0:
        top -= 1
        node = stack[top, 0]
        lo = stack[top, 1]
        hi = stack[top, 2]
        m = hi - lo
        total = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(lo, hi):
            v = y[order[i]]
            total += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        value[node] = total / m
        if ymin == ymax:
            value[node] = ymin
            continue
        if m < 2 * min_leaf:
            continue
        # partial Fisher-Yates for mtry candidate features
        for k in range(mtry):
            r = k + np.random.randint(d - k)
            tmp = feats[k]
            feats[k] = feats[r]
            feats[r] = tmp
        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        base = total * total / m
        for k in range(mtry):
            f = feats[k]
            for i in range(m):
                xs[i] = X[order[lo + i], f]
            idx = np.argsort(xs[:m], kind="mergesort")
            for i in range(m):
                ys[i] = y[order[lo + idx[i]]]
            sl = 0.0
            for i in range(m - 1):
                sl += ys[i]
                nl = i + 1
                nr = m - nl
                if nl < min_leaf:
                    continue
                if nr < min_leaf:
                    break
                a = xs[idx[i]]
                b = xs[idx[i + 1]]
                if a == b:
                    continue
                sr = total - sl
                gain = sl * sl / nl + sr * sr / nr - base
                if gain > best_gain + 1e-12 * abs(base):
                    best_gain = gain
                    best_f = f
                    best_thr = 0.5 * (a + b)
        if best_f < 0:
            continue
        # partition order[lo:hi] in place
        i = lo
        j = hi - 1
        while i <= j:
            if X[order[i], best_f] <= best_thr:
                i += 1
            else:
                tmp = order[i]
                order[i] = order[j]
                order[j] = tmp
                j -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        stack[top, 0] = rnode
        stack[top, 1] = i
        stack[top, 2] = hi
        top += 1
        stack[top, 0] = lnode
        stack[top, 1] = lo
        stack[top, 2] = i
        top += 1
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def _predict_tree(X, feature, threshold, left, right, value):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X) -> FloatArray:
        return _predict_tree(
            np.ascontiguousarray(X, dtype=np.float64),
            self.feature, self.threshold, self.left, self.right, self.value,
        )

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple[Tree, ...]
    bootstrap_indices: tuple[np.ndarray, ...]
    n_trees: int
    mtry: int
    min_leaf: int
    seed: int
    n_train: int

    def predict(self, X) -> FloatArray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        # average as offsets from the first tree so agreeing trees stay exact
        ref = self.trees[0].predict(X)
        acc = np.zeros(X.shape[0])
        for t in self.trees[1:]:
            acc += t.predict(X) - ref
        return ref + acc / len(self.trees)

    def in_bag_mask(self) -> np.ndarray:
        """(n_trees, n_train) boolean matrix of in-bag membership."""
        mask = np.zeros((self.n_trees, self.n_train), dtype=bool)
        for t, idx in enumerate(self.bootstrap_indices):
            mask[t, idx] = True
        return mask


def fit_forest(
    X,
    y,
    n_trees: int = 500,
    mtry: int | None = None,
    min_leaf: int = 5,
    seed: int = 0,
) -> Forest:
    """Random forest regression.

    Tree ``t`` draws its bootstrap sample and split candidates from a stream
    keyed by ``(seed, t)``, so the forest does not depend on the order in
    which trees are grown.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    n, d = X.shape
    if y.shape[0] != n:
        raise ValidationError("X and y have different numbers of rows")
    if min_leaf < 1 or n_trees < 1:
        raise ValidationError("min_leaf and n_trees must be positive")
    if n < 2 * min_leaf:
        raise TooFewRows(f"need at least {2 * min_leaf} rows for min_leaf={min_leaf}, got {n}")
    if mtry is None:
        mtry = max(1, math.ceil(d / 3))
    mtry = int(min(max(mtry, 1), d))

    def grow(t: int):
        s = child_seed(seed, 0x7472, t)
        rng = np.random.default_rng(s)
        idx = np.sort(rng.integers(0, n, size=n))
        tree_seed = int(rng.integers(0, 2**31 - 1))
        return idx, Tree(*_grow_tree(X, y, idx, mtry, min_leaf, tree_seed))

    built = parallel_map(grow, range(n_trees))
    return Forest(
        trees=tuple(b[1] for b in built),
        bootstrap_indices=tuple(b[0] for b in built),
        n_trees=n_trees,
        mtry=mtry,
        min_leaf=min_leaf,
        seed=seed,
        n_train=n,
    )


def predict_oob(forest: Forest, X_train) -> tuple[FloatArray, np.ndarray]:
    """Out-of-bag predictions for the training rows.

    Returns ``(pred, flagged)``; ``flagged[i]`` is True when unit ``i`` was
    in-bag for every tree, in which case ``pred[i]`` is the all-tree average.
    """
    X = np.ascontiguousarray(X_train, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n = X.shape[0]
    if n != forest.n_train:
        raise ValidationError("predict_oob expects the training matrix")
    acc = np.zeros(n)
    cnt = np.zeros(n)
    ref = forest.trees[0].predict(X)
    for tree, idx in zip(forest.trees, forest.bootstrap_indices):
        pred = tree.predict(X)
        oob = np.ones(n, dtype=bool)
        oob[idx] = False
        acc[oob] += pred[oob] - ref[oob]
        cnt[oob] += 1
    flagged = cnt == 0
    out = np.where(flagged, forest.predict(X), ref + acc / np.maximum(cnt, 1))
    if flagged.any():
        warnings.warn(
            f"{int(flagged.sum())} units were in-bag for every tree; "
            "using all-tree predictions for them",
            RuntimeWarning,
            stacklevel=2,
        )
    return out, flagged
