"""Isolation forest trained on feature vectors, built from scratch.

Each tree recursively partitions a uniform subsample (drawn without
replacement) by choosing a random attribute with nonzero range and a uniform
split value strictly between that attribute's minimum and maximum. A point's
anomaly score is

    s(x) = 2 ** (-E[h(x)] / c(psi))

where h(x) is the isolation path depth plus the average-BST adjustment
c(n) = 2 H(n-1) - 2 (n-1)/n for unresolved leaves of size n, and psi is the
subsample size. Higher scores are more anomalous.

Trees are stored as parallel arrays so batches of points are scored with a
handful of vectorized gather passes per tree.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IncompatibleModelError
from .seeding import rng_from

DEFAULT_NUM_TREES = 100
DEFAULT_SUBSAMPLE = 256


def harmonic_number(n: int) -> float:
    """Exact n-th harmonic number (float sum; n is small in practice)."""
    if n <= 0:
        return 0.0
    return float(np.sum(1.0 / np.arange(1, n + 1)))


def average_path_length(n: int) -> float:
    """Expected unsuccessful-search path length c(n) in a BST of n points."""
    if n <= 1:
        return 0.0
    return 2.0 * harmonic_number(n - 1) - 2.0 * (n - 1) / n


@dataclass
class IsolationTree:
    """One isolation tree in structure-of-arrays form.

    ``feature[i] == -1`` marks node i as a leaf holding ``size[i]`` training
    points; internal nodes route on ``point[feature] < threshold``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray

    def node_depths(self) -> np.ndarray:
        depths = np.zeros(len(self.feature), dtype=int)
        for node in range(len(self.feature)):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return depths

    def max_leaf_depth(self) -> int:
        depths = self.node_depths()
        return int(depths[self.feature < 0].max())

    def path_lengths(self, points: np.ndarray, leaf_adjust: np.ndarray) -> np.ndarray:
        """h(x) for a (batch, F) array: depth of the reached leaf plus
        c(leaf size), via level-synchronous traversal."""
        node = np.zeros(points.shape[0], dtype=int)
        depth = np.zeros(points.shape[0], dtype=float)
        out = np.empty(points.shape[0], dtype=float)
        active = np.arange(points.shape[0])
        while active.size:
            feat = self.feature[node[active]]
            at_leaf = feat < 0
            if at_leaf.any():
                done = active[at_leaf]
                out[done] = depth[done] + leaf_adjust[self.size[node[done]]]
            still = active[~at_leaf]
            if still.size == 0:
                break
            f = self.feature[node[still]]
            go_left = points[still, f] < self.threshold[node[still]]
            node[still] = np.where(go_left, self.left[node[still]], self.right[node[still]])
            depth[still] += 1.0
            active = still
        return out

    def to_json_obj(self) -> list:
        return [
            [int(f), float(t), int(l), int(r), int(s)]
            for f, t, l, r, s in zip(self.feature, self.threshold, self.left, self.right, self.size)
        ]

    @classmethod
    def from_json_obj(cls, rows: list) -> "IsolationTree":
        return cls(
            feature=np.array([r[0] for r in rows], dtype=int),
            threshold=np.array([r[1] for r in rows], dtype=float),
            left=np.array([r[2] for r in rows], dtype=int),
            right=np.array([r[3] for r in rows], dtype=int),
            size=np.array([r[4] for r in rows], dtype=int),
        )


@dataclass
class IsolationForestModel:
    trees: list
    subsample_size: int
    feature_count: int
    normalizer_c: float
    seed: int
    num_training_samples: int
    feature_manifest_hash: str | None = None
    _leaf_adjust: np.ndarray = field(default=None, repr=False, compare=False)

    def leaf_adjust_table(self) -> np.ndarray:
        if self._leaf_adjust is None:
            self._leaf_adjust = np.array(
                [average_path_length(n) for n in range(self.subsample_size + 1)]
            )
        return self._leaf_adjust

    def to_json_dict(self) -> dict:
        return {
            "subsample_size": int(self.subsample_size),
            "feature_count": int(self.feature_count),
            "normalizer_c": float(self.normalizer_c),
            "seed": int(self.seed),
            "num_training_samples": int(self.num_training_samples),
            "feature_manifest_hash": self.feature_manifest_hash,
            "trees": [t.to_json_obj() for t in self.trees],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "IsolationForestModel":
        return cls(
            trees=[IsolationTree.from_json_obj(rows) for rows in d["trees"]],
            subsample_size=int(d["subsample_size"]),
            feature_count=int(d["feature_count"]),
            normalizer_c=float(d["normalizer_c"]),
            seed=int(d["seed"]),
            num_training_samples=int(d["num_training_samples"]),
            feature_manifest_hash=d.get("feature_manifest_hash"),
        )


class _TreeBuilder:
    def __init__(self, rng, depth_limit):
        self.rng = rng
        self.depth_limit = depth_limit
        self.feature, self.threshold = [], []
        self.left, self.right, self.size = [], [], []

    def _new_node(self, n):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.size.append(n)
        return len(self.feature) - 1

    def build(self, data, depth):
        node = self._new_node(data.shape[0])
        if depth >= self.depth_limit or data.shape[0] <= 1:
            return node
        lo = data.min(axis=0)
        hi = data.max(axis=0)
        candidates = np.nonzero(hi > lo)[0]
        if candidates.size == 0:
            return node
        attr = int(self.rng.choice(candidates))
        split = float(self.rng.uniform(lo[attr], hi[attr]))
        if split <= lo[attr]:
            split = float(np.nextafter(lo[attr], hi[attr]))
        mask = data[:, attr] < split
        self.feature[node] = attr
        self.threshold[node] = split
        self.left[node] = self.build(data[mask], depth + 1)
        self.right[node] = self.build(data[~mask], depth + 1)
        return node


def fit(data, num_trees: int = DEFAULT_NUM_TREES, subsample: int | None = None, seed: int = 0) -> IsolationForestModel:
    """Train an isolation forest on a (num_samples, num_features) array.

    ``subsample`` defaults to min(256, num_samples); each tree draws its own
    subsample without replacement and is grown to depth ceil(log2(subsample)).
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ConfigError("training data must be a non-empty 2-D array")
    n = data.shape[0]
    if subsample is None:
        subsample = min(DEFAULT_SUBSAMPLE, n)
    if not 1 <= subsample <= n:
        raise ConfigError(f"subsample {subsample} must be in [1, {n}]")
    if num_trees < 1:
        raise ConfigError("num_trees must be >= 1")

    depth_limit = int(np.ceil(np.log2(subsample))) if subsample > 1 else 0
    trees = []
    for i in range(num_trees):
        rng = rng_from(seed, "tree", i)
        rows = rng.choice(n, size=subsample, replace=False)
        builder = _TreeBuilder(rng, depth_limit)
        builder.build(data[rows], 0)
        trees.append(IsolationTree(
            feature=np.array(builder.feature, dtype=int),
            threshold=np.array(builder.threshold, dtype=float),
            left=np.array(builder.left, dtype=int),
            right=np.array(builder.right, dtype=int),
            size=np.array(builder.size, dtype=int),
        ))
    return IsolationForestModel(
        trees=trees,
        subsample_size=int(subsample),
        feature_count=int(data.shape[1]),
        normalizer_c=average_path_length(int(subsample)),
        seed=int(seed),
        num_training_samples=n,
    )


def score_batch(model: IsolationForestModel, points) -> np.ndarray:
    """Anomaly scores in (0, 1) for a (batch, num_features) array."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != model.feature_count:
        raise IncompatibleModelError(
            f"point dimension {pts.shape[1]} != model feature count {model.feature_count}"
        )
    adjust = model.leaf_adjust_table()
    total = np.zeros(pts.shape[0])
    for tree in model.trees:
        total += tree.path_lengths(pts, adjust)
    mean_depth = total / len(model.trees)
    denom = model.normalizer_c if model.normalizer_c > 0 else 1.0
    return np.power(2.0, -mean_depth / denom)


def score(model: IsolationForestModel, point) -> float:
    """Anomaly score of a single feature vector."""
    return float(score_batch(model, np.asarray(point, dtype=float)[None, :])[0])
