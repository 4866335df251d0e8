"""CART decision tree on Gini impurity and cross-validated recursive
feature elimination.

The tree is the wrapper classifier behind RFE: fit on all current features,
rank importances, drop the least important, rescore by stratified k-fold
accuracy, repeat down to one feature, then keep the best-scoring subset
(ties toward fewer features, then lexicographic).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .numcore import InputError

_MIN_GAIN = 1e-12   # internal nodes must strictly reduce weighted impurity


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int = 8
    min_samples_leaf: int = 32


def gini(labels) -> float:
    """1 - sum p_c^2; in [0, 0.5] for binary labels, 0 iff pure."""
    y = np.asarray(labels)
    if y.size == 0:
        raise InputError("gini of an empty label set is undefined")
    _, counts = np.unique(y, return_counts=True)
    p = counts / y.size
    return float(1.0 - np.sum(p * p))


class _Node:
    __slots__ = ("feature", "threshold", "left", "right", "label", "counts",
                 "n", "gain")

    def __init__(self, label=None, counts=None, n=0):
        self.feature = None
        self.threshold = None
        self.left = None
        self.right = None
        self.label = label
        self.counts = counts
        self.n = n
        self.gain = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


class DecisionTree:
    def __init__(self, root: _Node, n_features: int, n_samples: int,
                 config: TreeConfig):
        self.root = root
        self.n_features = n_features
        self.n_samples = n_samples
        self.config = config

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape[0], dtype=np.int64)

        def walk(node: _Node, idx: np.ndarray):
            if node.is_leaf:
                out[idx] = node.label
                return
            left = X[idx, node.feature] <= node.threshold
            walk(node.left, idx[left])
            walk(node.right, idx[~left])

        walk(self.root, np.arange(X.shape[0]))
        return out

    def node_count(self) -> int:
        def count(node):
            return 1 if node.is_leaf else 1 + count(node.left) + count(node.right)
        return count(self.root)


def _binary_gini(pos: np.ndarray, n: np.ndarray) -> np.ndarray:
    frac = pos / n
    return 1.0 - (frac * frac + (1.0 - frac) * (1.0 - frac))


def _best_split(X, y, min_leaf):
    """Best (gain, feature, threshold) over midpoint candidates; ties go to
    the lower feature index, then the lower threshold. Returns None when no
    candidate leaves min_leaf samples on both sides with positive gain."""
    n = y.size
    total_pos = int(np.sum(y == 1))
    parent = _binary_gini(np.array([total_pos]), np.array([n]))[0]
    best = None
    for j in range(X.shape[1]):
        col = X[:, j]
        order = np.argsort(col, kind="stable")
        sv = col[order]
        sy = y[order]
        sizes = np.arange(1, n)
        pos_cum = np.cumsum(sy == 1)[:-1]
        valid = (sv[:-1] != sv[1:]) & (sizes >= min_leaf) & (n - sizes >= min_leaf)
        if not valid.any():
            continue
        nl = sizes[valid].astype(np.float64)
        pl = pos_cum[valid].astype(np.float64)
        nr = n - nl
        pr = total_pos - pl
        child = (nl * _binary_gini(pl, nl) + nr * _binary_gini(pr, nr)) / n
        gains = parent - child
        k = int(np.argmax(gains))
        gain = float(gains[k])
        if gain <= _MIN_GAIN:
            continue
        i = np.flatnonzero(valid)[k]
        thr = float((sv[i] + sv[i + 1]) / 2.0)
        if best is None or gain > best[0] + 1e-15:
            best = (gain, j, thr)
    return best


def fit_tree(X, y, config: Optional[TreeConfig] = None) -> DecisionTree:
    """Greedy CART on Gini; split candidates are midpoints of adjacent sorted
    unique values. Deterministic."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError("fit_tree needs a nonempty 2-D feature matrix")
    if y.shape != (X.shape[0],):
        raise InputError("labels must match the number of rows")
    cfg = config or TreeConfig()

    def leaf(yn):
        counts = np.array([int(np.sum(yn == 0)), int(np.sum(yn == 1))])
        return _Node(label=int(counts[1] > counts[0]), counts=counts, n=yn.size)

    def grow(Xn, yn, depth):
        node = leaf(yn)
        if depth >= cfg.max_depth or yn.size < 2 * cfg.min_samples_leaf:
            return node
        if node.counts[0] == 0 or node.counts[1] == 0:
            return node
        found = _best_split(Xn, yn, cfg.min_samples_leaf)
        if found is None:
            return node
        gain, j, thr = found
        node.feature = j
        node.threshold = thr
        node.gain = gain
        mask = Xn[:, j] <= thr
        node.left = grow(Xn[mask], yn[mask], depth + 1)
        node.right = grow(Xn[~mask], yn[~mask], depth + 1)
        return node

    root = grow(X, y, 0)
    return DecisionTree(root, X.shape[1], X.shape[0], cfg)


def feature_importance(tree: DecisionTree) -> np.ndarray:
    """Per-feature sum of (node sample fraction x impurity decrease),
    normalized to sum 1 (all zeros for a stump-less tree)."""
    imp = np.zeros(tree.n_features)

    def walk(node: _Node):
        if node.is_leaf:
            return
        imp[node.feature] += (node.n / tree.n_samples) * node.gain
        walk(node.left)
        walk(node.right)

    walk(tree.root)
    total = imp.sum()
    return imp / total if total > 0 else imp


# ----------------------------------------------------------------------
# recursive feature elimination
# ----------------------------------------------------------------------

@dataclass
class RfeResult:
    elimination_order: tuple[str, ...]          # least -> most important
    subset_scores: list = field(default_factory=list)  # {"features", "cv_accuracy"}
    selected: tuple[str, ...] = ()


def _stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    fold_id = np.empty(y.size, dtype=np.int64)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        fold_id[idx] = np.arange(idx.size) % folds
    return fold_id


def _cv_accuracy(X, y, cols, fold_id, folds, cfg) -> float:
    accs = []
    for f in range(folds):
        test = fold_id == f
        tree = fit_tree(X[~test][:, cols], y[~test], cfg)
        pred = tree.predict(X[test][:, cols])
        accs.append(float(np.mean(pred == y[test])))
    return float(np.mean(accs))


def rfe(X, y, feature_names: Sequence[str], folds: int = 3, seed: int = 0,
        tree_config: Optional[TreeConfig] = None, drop_per_step: int = 1) -> RfeResult:
    """Backward elimination wrapped around the decision tree.

    Each round scores the current subset by stratified k-fold CV accuracy,
    fits a tree on the full data for importances, and drops the least
    important feature(s) (importance ties drop the higher feature index).
    The selected subset maximizes mean CV accuracy, ties broken toward
    fewer features, then lexicographically.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    names = [str(nm) for nm in feature_names]
    if X.ndim != 2 or X.shape[1] != len(names):
        raise InputError("feature_names must match the matrix columns")
    if X.shape[1] < 1:
        raise InputError("rfe needs at least one feature")
    cfg = tree_config or TreeConfig()
    fold_id = _stratified_folds(y, folds, seed)

    current = list(range(len(names)))
    records = []
    eliminated: list[int] = []
    while True:
        score = _cv_accuracy(X, y, current, fold_id, folds, cfg)
        records.append({"features": [names[i] for i in current],
                        "cv_accuracy": score})
        if len(current) == 1:
            eliminated.append(current[0])
            break
        tree = fit_tree(X[:, current], y, cfg)
        imp = feature_importance(tree)
        order = sorted(range(len(current)), key=lambda i: (imp[i], -current[i]))
        dropping = order[:min(drop_per_step, len(current) - 1)]
        eliminated.extend(current[i] for i in dropping)
        for local in sorted(dropping, reverse=True):
            del current[local]

    best = min(records, key=lambda r: (-r["cv_accuracy"], len(r["features"]),
                                       tuple(r["features"])))
    return RfeResult(
        elimination_order=tuple(names[i] for i in eliminated),
        subset_scores=records,
        selected=tuple(best["features"]),
    )
