import numpy as np
import pytest

from dexter.errors import ConfigError, IncompatibleModelError
from dexter.isolation_forest import (
    IsolationForestModel,
    IsolationTree,
    average_path_length,
    fit,
    harmonic_number,
    score,
    score_batch,
)


def brute_auroc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_harmonic_and_path_length_constants():
    assert harmonic_number(1) == 1.0
    assert harmonic_number(3) == pytest.approx(1.0 + 0.5 + 1.0 / 3.0)
    assert average_path_length(0) == 0.0
    assert average_path_length(1) == 0.0
    # c(2) = 2 H(1) - 2 (1/2) = 1
    assert average_path_length(2) == pytest.approx(1.0)


def test_depth_bound():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(1000, 4))
    model = fit(data, num_trees=100, subsample=256, seed=1)
    limit = int(np.ceil(np.log2(256)))
    assert limit == 8
    assert all(tree.max_leaf_depth() <= limit for tree in model.trees)


def test_identical_training_points_give_single_leaf_trees():
    data = np.ones((50, 3)) * 2.5
    model = fit(data, num_trees=20, subsample=32, seed=3)
    for tree in model.trees:
        assert len(tree.feature) == 1
        assert tree.feature[0] == -1
        assert tree.size[0] == 32
    # every query lands in the depth-0 leaf: E[h] = c(psi), score = 0.5
    assert score(model, [0.0, 0.0, 0.0]) == pytest.approx(0.5)
    assert score(model, [100.0, -5.0, 2.5]) == pytest.approx(0.5)


def test_two_point_training_scores_half():
    # psi = 2: both points isolated at depth 1, leaf adjustment c(1) = 0,
    # normalizer c(2) = 1, so the score is 2^(-1/1) = 0.5 exactly.
    data = np.array([[0.0], [1.0]])
    model = fit(data, num_trees=10, subsample=2, seed=5)
    assert score(model, [0.0]) == pytest.approx(0.5)
    assert score(model, [1.0]) == pytest.approx(0.5)


def test_hand_constructed_tree_score_formula():
    # Single tree splitting [0, 1] at 0.5; query 0.0 reaches a singleton leaf
    # at depth 1: E[h] = 1 + c(1) = 1; score = 2^(-1 / c(2)) = 0.5.
    tree = IsolationTree(
        feature=np.array([0, -1, -1]),
        threshold=np.array([0.5, 0.0, 0.0]),
        left=np.array([1, -1, -1]),
        right=np.array([2, -1, -1]),
        size=np.array([2, 1, 1]),
    )
    model = IsolationForestModel(
        trees=[tree], subsample_size=2, feature_count=1,
        normalizer_c=average_path_length(2), seed=0, num_training_samples=2,
    )
    assert score(model, [0.0]) == pytest.approx(2.0 ** (-1.0 / 1.0))


def test_determinism_given_seed():
    rng = np.random.default_rng(1)
    data = rng.normal(size=(500, 5))
    queries = rng.normal(size=(50, 5))
    s1 = score_batch(fit(data, num_trees=50, subsample=128, seed=7), queries)
    s2 = score_batch(fit(data, num_trees=50, subsample=128, seed=7), queries)
    s3 = score_batch(fit(data, num_trees=50, subsample=128, seed=8), queries)
    assert np.array_equal(s1, s2)
    assert not np.array_equal(s1, s3)


def test_outlier_scores_above_median_training_score():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        data = rng.normal(size=(400, 2))
        model = fit(data, num_trees=50, subsample=128, seed=seed)
        train_scores = score_batch(model, data)
        assert score(model, [10.0, 10.0]) > np.median(train_scores)


def test_monotonicity_on_1d_uniform():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        data = rng.uniform(0.0, 1.0, size=(500, 1))
        model = fit(data, num_trees=30, subsample=128, seed=seed)
        if score(model, [5.0]) > score(model, [0.5]):
            hits += 1
    assert hits >= 95


def test_separation_auroc_on_planted_outliers():
    aurocs = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        inliers = rng.normal(size=(500, 2))
        angles = rng.uniform(0, 2 * np.pi, size=25)
        radii = rng.uniform(6.0, 8.0, size=25)
        outliers = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
        data = np.vstack([inliers, outliers])
        labels = np.array([False] * 500 + [True] * 25)
        model = fit(inliers, num_trees=100, subsample=256, seed=seed)
        aurocs.append(brute_auroc(score_batch(model, data), labels))
    assert np.mean(aurocs) >= 0.95


def test_score_range_open_interval():
    rng = np.random.default_rng(2)
    data = rng.normal(size=(300, 3))
    model = fit(data, num_trees=50, subsample=64, seed=0)
    queries = np.vstack([data[:50], rng.normal(size=(50, 3)) * 10])
    scores = score_batch(model, queries)
    assert np.all(scores > 0.0) and np.all(scores < 1.0)


def test_batch_matches_single():
    rng = np.random.default_rng(3)
    data = rng.normal(size=(200, 4))
    model = fit(data, num_trees=25, subsample=64, seed=1)
    queries = rng.normal(size=(20, 4))
    batch = score_batch(model, queries)
    singles = np.array([score(model, q) for q in queries])
    assert np.allclose(batch, singles, atol=1e-15)


def test_internal_nodes_partition_their_subsample():
    rng = np.random.default_rng(4)
    data = rng.normal(size=(300, 3))
    model = fit(data, num_trees=20, subsample=100, seed=2)
    for tree in model.trees:
        for node, feat in enumerate(tree.feature):
            if feat >= 0:
                left, right = tree.left[node], tree.right[node]
                assert tree.size[left] + tree.size[right] == tree.size[node]
                assert tree.size[left] >= 1 and tree.size[right] >= 1
                assert np.isfinite(tree.threshold[node])


def test_validation_errors():
    rng = np.random.default_rng(5)
    data = rng.normal(size=(50, 2))
    with pytest.raises(ConfigError):
        fit(np.empty((0, 2)))
    with pytest.raises(ConfigError):
        fit(data, subsample=51)
    with pytest.raises(ConfigError):
        fit(data, num_trees=0)
    model = fit(data, num_trees=5, subsample=16, seed=0)
    with pytest.raises(IncompatibleModelError):
        score(model, [1.0, 2.0, 3.0])


def test_json_roundtrip_preserves_scores():
    rng = np.random.default_rng(6)
    data = rng.normal(size=(200, 3))
    model = fit(data, num_trees=30, subsample=64, seed=9)
    model.feature_manifest_hash = "abc123"
    back = IsolationForestModel.from_json_dict(model.to_json_dict())
    queries = rng.normal(size=(30, 3))
    assert np.array_equal(score_batch(model, queries), score_batch(back, queries))
    assert back.feature_manifest_hash == "abc123"
    assert back.subsample_size == model.subsample_size
