"""Random Forest classifier: bootstrap bagging over CART trees with Gini splits.

Trees are stored as flat node arrays. Internal nodes send ``x <= threshold``
left. Every node keeps its (bootstrap-weighted) class counts so impurity
decreases can be recomputed for feature importance.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

_U64 = 1 << 64


class DegenerateLabelsError(ValueError):
    pass


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    mtry: int | None = None  # None -> floor(sqrt(n_features))
    seed: int = 0
    tie_class: int = 1  # winner of an even vote, and of a tied leaf
    n_jobs: int = 1  # worker processes; never changes the result

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.tie_class not in (0, 1):
            raise ValueError("tie_class must be 0 or 1")

    def resolve_mtry(self, n_features: int) -> int:
        mtry = self.mtry if self.mtry is not None else max(1, math.isqrt(n_features))
        if not 1 <= mtry <= n_features:
            raise ValueError(f"mtry={mtry} outside [1, {n_features}]")
        return mtry


def gini(counts: Sequence[float]) -> float:
    c = np.asarray(counts, dtype=float)
    total = c.sum()
    if total <= 0:
        return 0.0
    p = c / total
    return float(1.0 - np.sum(p * p))


@dataclass
class DecisionTree:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, 2)
    tie_class: int = 1

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaf_class(self) -> np.ndarray:
        c0, c1 = self.counts[:, 0], self.counts[:, 1]
        return np.where(c1 > c0, 1, np.where(c0 > c1, 0, self.tie_class))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        rows = np.arange(len(X))
        while active.size:
            n = node[active]
            go_left = X[rows[active], self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.leaf_class()[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, tie_class: int = 1) -> DecisionTree:
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=float),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["counts"], dtype=np.int64).reshape(-1, 2),
            tie_class,
        )


def _best_split(X, y, rows, features, min_leaf):
    """Lowest weighted child Gini over midpoints; ties -> lowest feature, then threshold."""
    n = len(rows)
    best_score, best_f, best_t = np.inf, -1, 0.0
    yn = y[rows]
    ones = yn.sum()
    n_left = np.arange(1, n, dtype=float)
    n_right = n - n_left
    size_ok = (n_left >= min_leaf) & (n_right >= min_leaf)
    tol = 1e-9 * n
    for f in features:
        x = X[rows, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        ok = size_ok & (xs[1:] != xs[:-1])
        if not ok.any():
            continue
        l1 = np.cumsum(yn[order])[:-1].astype(float)
        r1 = ones - l1
        # n_l * gini_l + n_r * gini_r
        score = (n_left - (l1 * l1 + (n_left - l1) ** 2) / n_left
                 + n_right - (r1 * r1 + (n_right - r1) ** 2) / n_right)
        score = np.where(ok, score, np.inf)
        # scores equal in exact arithmetic can differ in the last bits; treat
        # them as ties so the lowest threshold / feature wins
        k = int(np.argmax(score <= score.min() + tol))
        if score[k] < best_score - tol:
            lo, hi = xs[k], xs[k + 1]
            t = lo + (hi - lo) / 2.0
            if not lo <= t < hi:
                t = lo
            best_score, best_f, best_t = score[k], int(f), float(t)
    return best_f, best_t


def grow_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, config: ForestConfig,
              mtry: int) -> DecisionTree:
    """Grow one tree greedily on the rows given (duplicates count as weights)."""
    n_features = X.shape[1]
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(rows):
        ones = int(y[rows].sum())
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append((len(rows) - ones, ones))
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        c0, c1 = counts[node]
        if c0 == 0 or c1 == 0:
            continue
        if config.max_depth is not None and depth >= config.max_depth:
            continue
        if len(rows) < 2 * config.min_samples_leaf:
            continue
        feats = np.sort(rng.choice(n_features, size=mtry, replace=False))
        f, t = _best_split(X, y, rows, feats, config.min_samples_leaf)
        if f < 0:
            continue
        mask = X[rows, f] <= t
        lrows, rrows = rows[mask], rows[~mask]
        feature[node], threshold[node] = f, t
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        # right pushed first so the left subtree is numbered first
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))
    return DecisionTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(counts, dtype=np.int64).reshape(-1, 2),
        config.tie_class,
    )


def tree_seed(seed: int, index: int) -> int:
    return (seed + index) % _U64


def _train_one(args) -> DecisionTree:
    X, y, config, mtry, index = args
    rng = np.random.default_rng(tree_seed(config.seed, index))
    boot = rng.integers(0, len(y), size=len(y))
    return grow_tree(X[boot], y[boot], rng, config, mtry)


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    config: ForestConfig
    feature_names: tuple[str, ...]

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def votes(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([t.predict(X) for t in self.trees])

    def predict_score(self, X) -> np.ndarray:
        """Fraction of trees voting class 1."""
        return self.votes(X).mean(axis=0)

    def predict(self, X) -> np.ndarray:
        votes = self.votes(X)
        ones = votes.sum(axis=0)
        zeros = len(self.trees) - ones
        return np.where(ones > zeros, 1, np.where(zeros > ones, 0, self.config.tie_class))

    def feature_importance(self) -> np.ndarray:
        return feature_importance(self)

    def to_dict(self) -> dict:
        return {
            "format": "mcidrive.forest/1",
            "config": asdict(self.config),
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> ForestModel:
        config = ForestConfig(**d["config"])
        trees = [DecisionTree.from_dict(t, config.tie_class) for t in d["trees"]]
        return cls(trees, config, tuple(d["feature_names"]))


def train_forest(X, y, config: ForestConfig = ForestConfig(),
                 feature_names: Sequence[str] | None = None) -> ForestModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per label")
    if len(y) < 2:
        raise ValueError("need at least two training rows")
    if not set(np.unique(y)) <= {0, 1}:
        raise ValueError("labels must be 0/1")
    if len(np.unique(y)) < 2:
        raise DegenerateLabelsError("training labels contain a single class")
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise ValueError("feature_names length does not match X")
    mtry = config.resolve_mtry(X.shape[1])
    jobs = [(X, y, config, mtry, i) for i in range(config.n_trees)]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            trees = list(pool.map(_train_one, jobs, chunksize=max(1, config.n_trees // (4 * config.n_jobs))))
    else:
        trees = [_train_one(job) for job in jobs]
    return ForestModel(trees, config, names)


def feature_importance(model: ForestModel) -> np.ndarray:
    """Mean decrease in Gini impurity, weighted by node share, normalized to 1."""
    total = np.zeros(model.n_features)
    for tree in model.trees:
        c = tree.counts.astype(float)
        n = c.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            imp = np.where(n > 0, 1.0 - ((c / n[:, None]) ** 2).sum(axis=1), 0.0)
        internal = np.flatnonzero(tree.feature >= 0)
        if internal.size == 0:
            continue
        l, r = tree.left[internal], tree.right[internal]
        gain = (n[internal] * imp[internal] - n[l] * imp[l] - n[r] * imp[r]) / n[0]
        np.add.at(total, tree.feature[internal], np.maximum(gain, 0.0))
    s = total.sum()
    if s <= 0:
        return np.full(model.n_features, 1.0 / model.n_features)
    return total / s
