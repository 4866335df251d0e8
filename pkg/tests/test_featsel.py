import numpy as np
import pytest

from fepkit import featsel as fs
from fepkit.numcore import InputError


# ----------------------------------------------------------------------
# gini
# ----------------------------------------------------------------------

def test_gini_balanced():
    assert fs.gini([0, 0, 1, 1]) == pytest.approx(0.5)


def test_gini_pure():
    assert fs.gini([1, 1, 1]) == 0.0


def test_gini_three_to_one():
    assert fs.gini([0, 0, 0, 1]) == pytest.approx(0.375)


def test_gini_empty_rejected():
    with pytest.raises(InputError):
        fs.gini([])


def test_gini_range_binary(rng):
    for _ in range(50):
        y = rng.integers(0, 2, rng.integers(1, 40))
        g = fs.gini(y)
        assert 0.0 <= g <= 0.5
        assert (g == 0.0) == (len(np.unique(y)) == 1)


# ----------------------------------------------------------------------
# tree fitting
# ----------------------------------------------------------------------

def test_single_class_gives_single_leaf():
    X = np.arange(10, dtype=float).reshape(-1, 1)
    tree = fs.fit_tree(X, np.ones(10, dtype=int),
                       fs.TreeConfig(min_samples_leaf=1))
    assert tree.root.is_leaf
    assert np.all(tree.predict(X) == 1)


def test_perfect_threshold_gives_depth_one():
    X = np.linspace(0, 1, 40).reshape(-1, 1)
    y = (X[:, 0] > 0.5).astype(int)
    tree = fs.fit_tree(X, y, fs.TreeConfig(max_depth=4, min_samples_leaf=1))
    assert not tree.root.is_leaf
    assert tree.root.left.is_leaf and tree.root.right.is_leaf
    assert np.all(tree.predict(X) == y)


def _xor_data(per_quadrant=(30, 29, 30, 30)):
    # discrete corners, one count off balance: a perfectly balanced XOR has
    # zero Gini gain everywhere and greedy CART would never split at all
    pts, ys = [], []
    for i, (cx, cy) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
        n = per_quadrant[i]
        pts.append(np.tile([float(cx), float(cy)], (n, 1)))
        ys.append(np.full(n, cx ^ cy))
    return np.concatenate(pts), np.concatenate(ys)


def test_xor_needs_depth_two():
    X, y = _xor_data()
    deep = fs.fit_tree(X, y, fs.TreeConfig(max_depth=2, min_samples_leaf=1))
    assert np.mean(deep.predict(X) == y) == 1.0
    shallow = fs.fit_tree(X, y, fs.TreeConfig(max_depth=1, min_samples_leaf=1))
    assert np.mean(shallow.predict(X) == y) <= 0.55


def test_depth_monotone_train_accuracy(rng):
    X = rng.normal(0, 1, (400, 3))
    y = ((X[:, 0] + 0.5 * X[:, 1] ** 2 + 0.2 * rng.normal(0, 1, 400)) > 0).astype(int)
    prev = 0.0
    for depth in (1, 2, 4, 8):
        tree = fs.fit_tree(X, y, fs.TreeConfig(max_depth=depth, min_samples_leaf=4))
        acc = float(np.mean(tree.predict(X) == y))
        assert acc >= prev - 1e-12
        prev = acc


def test_min_samples_leaf_respected(rng):
    X = rng.normal(0, 1, (200, 2))
    y = (X[:, 0] > 0).astype(int)
    tree = fs.fit_tree(X, y, fs.TreeConfig(max_depth=8, min_samples_leaf=32))

    def check(node):
        if node.is_leaf:
            assert node.n >= 32
        else:
            check(node.left)
            check(node.right)

    check(tree.root)


def test_tree_matches_path_walk_oracle(rng):
    X = rng.normal(0, 1, (800, 4))
    y = ((X[:, 0] * X[:, 2] > 0) ^ (X[:, 1] > 0.3)).astype(int)
    tree = fs.fit_tree(X, y, fs.TreeConfig(max_depth=6, min_samples_leaf=8))
    queries = rng.normal(0, 1, (1000, 4))

    def walk_one(row):
        node = tree.root
        while not node.is_leaf:
            node = node.left if row[node.feature] <= node.threshold else node.right
        return node.label

    oracle = np.array([walk_one(q) for q in queries])
    assert np.array_equal(tree.predict(queries), oracle)


def test_fit_tree_rejects_bad_input():
    with pytest.raises(InputError):
        fs.fit_tree(np.zeros((0, 2)), np.zeros(0, dtype=int))
    with pytest.raises(InputError):
        fs.fit_tree(np.zeros((4, 2)), np.zeros(3, dtype=int))


# ----------------------------------------------------------------------
# feature importance
# ----------------------------------------------------------------------

def test_single_split_importance_is_one():
    X = np.linspace(0, 1, 64).reshape(-1, 1)
    X = np.column_stack([X, np.zeros(64)])
    y = (X[:, 0] > 0.5).astype(int)
    tree = fs.fit_tree(X, y, fs.TreeConfig(max_depth=3, min_samples_leaf=1))
    imp = fs.feature_importance(tree)
    assert imp[0] == pytest.approx(1.0)
    assert imp[1] == 0.0


def test_importance_hand_computed_two_feature_tree():
    # root splits on f0 (gain g0 over all n), one child splits on f1
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 8, dtype=float)
    y = np.array([0, 0, 0, 1] * 8)
    tree = fs.fit_tree(X, y, fs.TreeConfig(max_depth=2, min_samples_leaf=1))
    imp = fs.feature_importance(tree)

    total = 0.0
    parts = {0: 0.0, 1: 0.0}

    def walk(node):
        nonlocal total
        if node.is_leaf:
            return
        w = node.n / tree.n_samples * node.gain
        parts[node.feature] += w
        total += w
        walk(node.left)
        walk(node.right)

    walk(tree.root)
    assert imp[0] == pytest.approx(parts[0] / total)
    assert imp[1] == pytest.approx(parts[1] / total)
    assert imp.sum() == pytest.approx(1.0)


# ----------------------------------------------------------------------
# RFE
# ----------------------------------------------------------------------

def test_rfe_single_feature():
    X = np.linspace(0, 1, 200).reshape(-1, 1)
    y = (X[:, 0] > 0.4).astype(int)
    res = fs.rfe(X, y, ["only"], folds=3, seed=0,
                 tree_config=fs.TreeConfig(min_samples_leaf=4))
    assert res.selected == ("only",)
    assert res.elimination_order == ("only",)


def _informative_noise_data(seed, n=600):
    """Noise-variance and MCS proxies drive the label; three pure-noise
    features ride along. Mirrors the error-margin structure of the traces."""
    rng = np.random.default_rng(seed)
    snr = rng.normal(10, 6, n)
    nv = 10 ** (-snr / 10)
    mcs = np.clip(np.round((snr + rng.normal(0, 2.0, n)) / 3), 0, 10)
    p = 1.0 / (1.0 + np.exp((snr - 3 * mcs) / 1.5))
    y = (rng.random(n) < p).astype(int)
    X = np.column_stack([nv, mcs, rng.normal(0, 1, n), rng.normal(0, 1, n),
                         rng.normal(0, 1, n)])
    return X, y


def test_rfe_recovers_informative_pair():
    hits = 0
    for seed in range(8):
        X, y = _informative_noise_data(4000 + seed)
        res = fs.rfe(X, y, ["nv", "mcs", "n1", "n2", "n3"], folds=3, seed=seed,
                     tree_config=fs.TreeConfig(max_depth=8, min_samples_leaf=16))
        if set(res.selected) == {"nv", "mcs"}:
            hits += 1
    assert hits >= 7


def test_rfe_elimination_order_is_permutation(rng):
    X = rng.normal(0, 1, (300, 4))
    y = (X[:, 0] > 0).astype(int)
    res = fs.rfe(X, y, ["w", "x", "y", "z"], folds=3, seed=1,
                 tree_config=fs.TreeConfig(min_samples_leaf=8))
    assert sorted(res.elimination_order) == ["w", "x", "y", "z"]
    assert set(res.selected) <= {"w", "x", "y", "z"}
    assert len(res.subset_scores) == 4


def test_rfe_selection_maximizes_cv_score(rng):
    X = rng.normal(0, 1, (400, 3))
    y = ((X[:, 0] + X[:, 1]) > 0).astype(int)
    res = fs.rfe(X, y, ["f0", "f1", "f2"], folds=3, seed=2,
                 tree_config=fs.TreeConfig(min_samples_leaf=8))
    best = max(r["cv_accuracy"] for r in res.subset_scores)
    chosen = [r for r in res.subset_scores if tuple(r["features"]) == res.selected]
    assert chosen[0]["cv_accuracy"] == best
    ties = [r for r in res.subset_scores if r["cv_accuracy"] == best]
    assert all(len(res.selected) <= len(r["features"]) for r in ties)


def test_rfe_drop_per_step_plural():
    X, y = _informative_noise_data(4100, n=800)
    res = fs.rfe(X, y, ["a", "b", "c", "d", "e"], folds=3, seed=3, drop_per_step=2,
                 tree_config=fs.TreeConfig(max_depth=6, min_samples_leaf=16))
    assert sorted(res.elimination_order) == ["a", "b", "c", "d", "e"]
    # 5 -> 3 -> 1 features scored
    assert [len(r["features"]) for r in res.subset_scores] == [5, 3, 1]
