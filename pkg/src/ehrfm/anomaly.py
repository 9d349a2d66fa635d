"""Isolation forest over fixed-length representations."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

N_TREES = 100
PSI = 256
THRESHOLD = 0.5


def harmonic(k: int) -> float:
    return float(np.sum(1.0 / np.arange(1, k + 1))) if k > 0 else 0.0


def c_factor(m) -> float:
    """Average unsuccessful-search path length in a binary search tree of m points."""
    m = int(m)
    if m <= 1:
        return 0.0
    return 2.0 * harmonic(m - 1) - 2.0 * (m - 1) / m


@dataclasses.dataclass
class IsolationTree:
    """Node arrays; ``feature == -1`` marks a leaf and ``size`` counts its subsample points."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def to_json(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "size": self.size.tolist(), "depth": self.depth.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "IsolationTree":
        return cls(np.asarray(obj["feature"], dtype=np.int64),
                   np.asarray(obj["threshold"], dtype=float),
                   np.asarray(obj["left"], dtype=np.int64),
                   np.asarray(obj["right"], dtype=np.int64),
                   np.asarray(obj["size"], dtype=np.int64),
                   np.asarray(obj["depth"], dtype=np.int64))


def fit_tree(X: np.ndarray, height_limit: int, rng: np.random.Generator) -> IsolationTree:
    """Grow one tree on ``X`` with random dimension / uniform split value choices."""
    feature, threshold, left, right, size, depth = [], [], [], [], [], []

    def new_node(d):
        for arr, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (size, 0),
                       (depth, d)):
            arr.append(v)
        return len(feature) - 1

    root = new_node(0)
    stack = [(root, np.arange(X.shape[0]))]
    while stack:
        node, idx = stack.pop()
        d = depth[node]
        sub = X[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if d >= height_limit or idx.size <= 1 or splittable.size == 0:
            size[node] = idx.size
            continue
        dim = int(rng.choice(splittable))
        value = rng.uniform(lo[dim], hi[dim])
        while not lo[dim] < value < hi[dim]:
            value = rng.uniform(lo[dim], hi[dim])
        goes_left = sub[:, dim] < value
        l, r = new_node(d + 1), new_node(d + 1)
        feature[node], threshold[node], left[node], right[node] = dim, value, l, r
        size[node] = idx.size
        stack.append((r, idx[~goes_left]))
        stack.append((l, idx[goes_left]))
    return IsolationTree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
                         np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                         np.array(size, dtype=np.int64), np.array(depth, dtype=np.int64))


def _leaves(tree: IsolationTree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = tree.feature[node] >= 0
    while active.any():
        rows = np.flatnonzero(active)
        n = node[rows]
        go_left = X[rows, tree.feature[n]] < tree.threshold[n]
        node[rows] = np.where(go_left, tree.left[n], tree.right[n])
        active = tree.feature[node] >= 0
    return node


def path_length(tree: IsolationTree, X) -> np.ndarray:
    """Depth of the reached leaf plus c(m) for the m subsample points stored there."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    used = tree.feature[tree.feature >= 0]
    if used.size and X.shape[1] <= used.max():
        raise ValueError(f"points have {X.shape[1]} dimensions, tree splits on dimension {used.max()}")
    leaf = _leaves(tree, X)
    adjust = np.array([c_factor(m) for m in tree.size])
    return tree.depth[leaf] + adjust[leaf]


@dataclasses.dataclass
class AnomalyForest:
    trees: list[IsolationTree]
    psi: int
    height_limit: int
    n_features: int
    seed: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def normalizer(self) -> float:
        return c_factor(self.psi)

    def to_json(self) -> dict:
        return {"n_trees": self.n_trees, "psi": self.psi, "height_limit": self.height_limit,
                "n_features": self.n_features, "seed": self.seed,
                "trees": [t.to_json() for t in self.trees]}

    @classmethod
    def from_json(cls, obj: dict) -> "AnomalyForest":
        return cls([IsolationTree.from_json(t) for t in obj["trees"]], obj["psi"],
                   obj["height_limit"], obj["n_features"], obj["seed"])


def fit_forest(X, n_trees: int = N_TREES, psi: int = PSI, seed: int = 0) -> AnomalyForest:
    """Fit ``n_trees`` trees, each on its own subsample of ``psi`` rows drawn without replacement."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least 2 rows")
    if not np.isfinite(X).all():
        raise ValueError("representations contain non-finite values")
    if n_trees < 1:
        raise ValueError("n_trees must be at least 1")
    psi = min(int(psi), X.shape[0])
    if psi < 2:
        raise ValueError("psi must be at least 2")
    limit = math.ceil(math.log2(psi))
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        sample = rng.choice(X.shape[0], size=psi, replace=False)
        trees.append(fit_tree(X[sample], limit, rng))
    return AnomalyForest(trees, psi, limit, X.shape[1], seed)


def mean_path_length(forest: AnomalyForest, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {X.shape[1]}")
    return np.mean([path_length(t, X) for t in forest.trees], axis=0)


def score_from_path(mean_path, normalizer: float):
    return np.power(2.0, -np.asarray(mean_path, dtype=float) / normalizer)


def anomaly_score(forest: AnomalyForest, X) -> np.ndarray:
    """s(x) = 2^(-h̄(x)/c(psi)); values near 1 are likely outliers."""
    if forest is None or not forest.trees:
        raise ValueError("forest is not fitted")
    return score_from_path(mean_path_length(forest, X), forest.normalizer)


def contamination_threshold(train_scores, contamination: float) -> float:
    """Score above which roughly ``contamination`` of the training scores fall."""
    if not 0.0 < contamination < 1.0:
        raise ValueError("contamination must be in (0, 1)")
    return float(np.quantile(np.asarray(train_scores, dtype=float), 1.0 - contamination))


def label_outliers(scores, threshold: float = THRESHOLD) -> np.ndarray:
    return np.asarray(scores, dtype=float) > threshold


def save_forest(forest: AnomalyForest, path, threshold: float | None = None) -> None:
    obj = forest.to_json()
    obj["threshold"] = threshold
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_forest(path) -> tuple[AnomalyForest, float | None]:
    with open(path) as fh:
        obj = json.load(fh)
    return AnomalyForest.from_json(obj), obj.get("threshold")


def write_scores(path: str | os.PathLike, ids, scores, flags) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hospitalization_id", "score", "flag"])
        for hid, s, f in zip(ids, scores, flags):
            writer.writerow([hid, repr(float(s)), int(bool(f))])


def read_scores(path: str | os.PathLike):
    import pandas as pd

    df = pd.read_csv(path, dtype={"hospitalization_id": str}, float_precision="round_trip")
    df["flag"] = df["flag"].astype(bool)
    return df


class IsolationForest(OutlierMixin, BaseEstimator):
    """Estimator front end. ``predict`` returns boolean outlier flags.

    With ``contamination`` set, the threshold is the training-score quantile
    that flags that fraction of the training rows; otherwise ``threshold``.
    """

    def __init__(self, n_trees: int = N_TREES, psi: int = PSI, seed: int = 0,
                 threshold: float = THRESHOLD, contamination: float | None = None):
        self.n_trees = n_trees
        self.psi = psi
        self.seed = seed
        self.threshold = threshold
        self.contamination = contamination

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.forest_ = fit_forest(X, self.n_trees, self.psi, self.seed)
        if self.contamination is None:
            self.threshold_ = float(self.threshold)
        else:
            self.threshold_ = contamination_threshold(anomaly_score(self.forest_, X),
                                                      self.contamination)
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X):
        check_is_fitted(self, "forest_")
        return anomaly_score(self.forest_, check_array(X, dtype=float))

    def decision_function(self, X):
        return self.score_samples(X) - self.threshold_

    def predict(self, X):
        return label_outliers(self.score_samples(X), self.threshold_)
