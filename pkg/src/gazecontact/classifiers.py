"""Classical learners: random forest, linear SVM and online multinomial
logistic regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, DimensionMismatch
from .numerics import Rng

# ---------------------------------------------------------------------------
# random forest


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # positive-class frequency at each node

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.intp)
        rows = np.arange(x.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[active]
            go_left = x[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.value[node]


def grow_tree(x: np.ndarray, y: np.ndarray, rng, candidates: int = 10, max_retries: int = 10) -> Tree:
    """Grow one unpruned tree.

    At each node ``candidates`` random (feature, threshold) proposals are
    scored by weighted Gini impurity. Thresholds are values of node samples,
    so the tree depends only on per-feature ranks.
    """
    n, d = x.shape
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    stack = [(new_node(np.arange(n)), np.arange(n))]
    while stack:
        node, idx = stack.pop()
        yi = y[idx]
        pos = yi.sum()
        if idx.size < 2 or pos == 0 or pos == idx.size:
            continue
        best = None
        for _ in range(max_retries):
            feats = rng.integers(0, d, size=candidates)
            for f in feats:
                vals = x[idx, f]
                mx = vals.max()
                below = vals[vals < mx]
                if below.size == 0:
                    continue
                t = below[int(rng.integers(0, below.size))]
                mask = vals <= t
                nl = mask.sum()
                nr = idx.size - nl
                pl = yi[mask].sum()
                pr = pos - pl
                # weighted Gini: n_l * 2 p_l (1 - p_l) + n_r * 2 p_r (1 - p_r)
                score = 2.0 * (pl * (nl - pl) / nl + pr * (nr - pr) / nr)
                if best is None or score < best[0]:
                    best = (score, int(f), float(t), mask)
            if best is not None:
                break
        if best is None:
            continue
        _, f, t, mask = best
        li, ri = idx[mask], idx[~mask]
        feature[node] = f
        threshold[node] = t
        ln = new_node(li)
        rn = new_node(ri)
        left[node] = ln
        right[node] = rn
        stack.append((rn, ri))
        stack.append((ln, li))
    return Tree(
        feature=np.array(feature, dtype=np.intp),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.intp),
        right=np.array(right, dtype=np.intp),
        value=np.array(value, dtype=np.float64),
    )


@dataclass(frozen=True)
class ForestModel:
    trees: tuple
    n_features: int
    n_trees: int = 100
    candidates_per_node: int = 10

    def to_arrays(self):
        sizes = np.array([t.feature.size for t in self.trees])
        cat = lambda name: np.concatenate([getattr(t, name) for t in self.trees])
        return [
            np.array([self.n_features, self.n_trees, self.candidates_per_node]),
            sizes, cat("feature"), cat("threshold"), cat("left"), cat("right"), cat("value"),
        ]

    @classmethod
    def from_arrays(cls, arrays):
        meta, sizes, feat, thr, lft, rgt, val = arrays
        trees = []
        start = 0
        for s in sizes.astype(int):
            sl = slice(start, start + s)
            trees.append(Tree(feat[sl].astype(np.intp), thr[sl], lft[sl].astype(np.intp),
                              rgt[sl].astype(np.intp), val[sl]))
            start += s
        return cls(trees=tuple(trees), n_features=int(meta[0]), n_trees=int(meta[1]),
                   candidates_per_node=int(meta[2]))


def fit_forest(features, labels, rng=None, n_trees: int = 100, candidates_per_node: int = 10) -> ForestModel:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DegenerateInput("forest needs at least two samples")
    if y.min() == y.max():
        raise DegenerateInput("forest training needs both classes")
    rng = rng if rng is not None else Rng(0)
    n = x.shape[0]
    trees = []
    for t in range(n_trees):
        trng = rng.substream(t)
        boot = trng.integers(0, n, size=n)
        trees.append(grow_tree(x[boot], y[boot], trng, candidates_per_node))
    return ForestModel(tuple(trees), x.shape[1], n_trees, candidates_per_node)


def predict_forest(model: ForestModel, features) -> np.ndarray | float:
    """Mean positive-class leaf frequency over trees; accepts one vector or a matrix."""
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.n_features:
        raise DimensionMismatch(f"expected {model.n_features} features, got {x.shape[1]}")
    prob = np.mean([t.predict(x) for t in model.trees], axis=0)
    return float(prob[0]) if single else prob


# ---------------------------------------------------------------------------
# linear SVM


@dataclass(frozen=True)
class LinearSvmModel:
    weights: np.ndarray
    bias: float
    C: float = 1.0

    def decision(self, features) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weights + self.bias

    def to_arrays(self):
        return [self.weights, np.array([self.bias, self.C])]

    @classmethod
    def from_arrays(cls, arrays):
        return cls(weights=arrays[0], bias=float(arrays[1][0]), C=float(arrays[1][1]))


def fit_linear_svm(features, labels, C: float = 1.0, rng=None, epochs: int = 200) -> LinearSvmModel:
    """Primal hinge-loss SVM by Pegasos subgradient steps.

    Objective ``lam/2 |(w, b)|^2 + mean(hinge)`` with ``lam = 1 / (C n)``; the
    bias is learned as the weight of a constant input. Returns the average of
    the iterates over the second half of training.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.where(np.asarray(labels) > 0, 1.0, -1.0)
    if not ((y > 0).any() and (y < 0).any()):
        raise DegenerateInput("SVM training needs both classes")
    n, d = x.shape
    if C <= 0:
        return LinearSvmModel(np.zeros(d), 0.0, float(C))
    rng = rng if rng is not None else Rng(0)
    xa = np.hstack([x, np.ones((n, 1))])
    lam = 1.0 / (C * n)
    w = np.zeros(d + 1)
    w_avg = np.zeros(d + 1)
    count = 0
    t = 0
    half = epochs // 2
    for epoch in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            xi = xa[i]
            hit = y[i] * (xi @ w) < 1.0
            w *= 1.0 - 1.0 / t
            if hit:
                w += (eta * y[i]) * xi
        if epoch >= half:
            w_avg += w
            count += 1
    w_avg /= count
    return LinearSvmModel(w_avg[:d].copy(), float(w_avg[d]), float(C))


# ---------------------------------------------------------------------------
# online multinomial logistic regression


@dataclass
class OnlineLogRegModel:
    weights: np.ndarray  # (classes, d)
    biases: np.ndarray  # (classes,)
    learning_rate: float = 0.05
    l2: float = 1e-4
    updates: int = 0

    @classmethod
    def create(cls, classes: int, dim: int, learning_rate: float = 0.05, l2: float = 1e-4):
        if not 1 <= classes <= 4:
            raise DegenerateInput("online classifier supports one to four classes")
        return cls(np.zeros((classes, dim)), np.zeros(classes), learning_rate, l2)

    @property
    def classes(self) -> int:
        return self.biases.shape[0]

    def proba(self, feature) -> np.ndarray:
        x = np.asarray(feature, dtype=np.float64)
        if x.shape[-1] != self.weights.shape[1]:
            raise DimensionMismatch(f"expected {self.weights.shape[1]} features, got {x.shape[-1]}")
        z = x @ self.weights.T + self.biases
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)


def online_update(model: OnlineLogRegModel, feature, assigned_class: int) -> OnlineLogRegModel:
    """One SGD step on multinomial cross-entropy with L2 decay; returns a new model."""
    if not 0 <= assigned_class < model.classes:
        raise DimensionMismatch(f"class {assigned_class} out of range")
    x = np.asarray(feature, dtype=np.float64)
    p = model.proba(x)
    p[assigned_class] -= 1.0
    lr = model.learning_rate
    w = model.weights - lr * (np.outer(p, x) + model.l2 * model.weights)
    b = model.biases - lr * p
    return OnlineLogRegModel(w, b, model.learning_rate, model.l2, model.updates + 1)
