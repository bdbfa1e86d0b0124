"""Bagged CART ensemble over episode meta-features.

Each tree sees a bootstrap resample of the rows and a fixed random subset of
the 48 features (drawn once per tree). Splits minimise weighted Gini impurity.
Ties in split scores go to the lower feature index, and ties in leaf or vote
counts go to the earlier label in ``label_set``.

Feature importance follows the "risk change per branch node" recipe: each
split adds its node-probability-weighted impurity decrease to the split
feature, each tree's vector is divided by its number of branch nodes, and the
ensemble importance is the mean over trees. Gini equals the mean squared
error of one-hot class indicators, so this is the squared-error reading.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyTrainingSet, UnfittedModel

SCHEMA_VERSION = 1
_TIE_EPS = 1e-12


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 12
    min_leaf: int = 1


@dataclass(frozen=True)
class EnsembleParams:
    n_trees: int = 100
    features_per_tree: int | None = 7   # None -> all features
    bootstrap: bool = True
    max_depth: int = 12
    min_leaf: int = 1

    def tree_params(self) -> TreeParams:
        return TreeParams(self.max_depth, self.min_leaf)


@dataclass
class DecisionTree:
    """Array-encoded binary tree.

    ``feature[i]`` is the 0-based split column of node ``i`` or -1 for a leaf;
    rows with ``x[feature] <= threshold`` go to ``left``. ``counts[i]`` holds
    the per-class training counts reaching node ``i``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray
    importance: np.ndarray          # per-tree, already divided by branch count
    n_features: int

    @property
    def n_branches(self) -> int:
        return int(np.sum(self.feature >= 0))

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while np.any(active):
            idx = np.nonzero(active)[0]
            f = self.feature[node[idx]]
            go_left = X[idx, f] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
            active = self.feature[node] >= 0
        return node

    def predict_index(self, X: np.ndarray) -> np.ndarray:
        # argmax returns the first maximum, i.e. the earlier label on ties
        return np.argmax(self.counts[self.leaf_index(X)], axis=1)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
            "importance": [float(v) for v in self.importance],
            "n_features": self.n_features,
        }

    @classmethod
    def from_dict(cls, d: dict) -> DecisionTree:
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            counts=np.asarray(d["counts"], dtype=np.int64),
            importance=np.asarray(d["importance"], dtype=np.float64),
            n_features=int(d["n_features"]),
        )


def _gini_from_counts(counts: np.ndarray, n: np.ndarray) -> np.ndarray:
    safe = np.where(n > 0, n, 1)
    return 1.0 - np.sum((counts / safe[..., None]) ** 2, axis=-1)


def _best_split(X: np.ndarray, y: np.ndarray, n_classes: int, features: Sequence[int],
                min_leaf: int) -> tuple[int, float, float] | None:
    """Best (feature, threshold, weighted child impurity) over ``features``.

    Features are scanned in ascending order and a candidate replaces the
    incumbent only if strictly better, so ties keep the lower index and,
    within a feature, the lower threshold.
    """
    n = len(y)
    best = None
    best_score = math.inf
    onehot = np.eye(n_classes, dtype=np.int64)[y]
    total = onehot.sum(axis=0)
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        # candidate cut after position i (left = first i+1 rows)
        distinct = np.nonzero(xs[1:] > xs[:-1])[0]
        if distinct.size == 0:
            continue
        n_left = distinct + 1
        ok = (n_left >= min_leaf) & (n - n_left >= min_leaf)
        distinct, n_left = distinct[ok], n_left[ok]
        if distinct.size == 0:
            continue
        cum = np.cumsum(onehot[order], axis=0)
        left_counts = cum[distinct]
        right_counts = total - left_counts
        n_right = n - n_left
        score = (n_left * _gini_from_counts(left_counts, n_left)
                 + n_right * _gini_from_counts(right_counts, n_right)) / n
        j = int(np.argmin(score))
        if score[j] < best_score - _TIE_EPS:
            best_score = float(score[j])
            i = distinct[j]
            best = (int(f), 0.5 * (xs[i] + xs[i + 1]), best_score)
    return best


def fit_decision_tree(X, y, feature_subset: Sequence[int] | None = None,
                      n_classes: int | None = None, params: TreeParams = TreeParams(),
                      rng_seed=None) -> DecisionTree:
    """Grow a CART classification tree.

    ``y`` holds class indices ``0..n_classes-1``; ``feature_subset`` holds
    0-based column indices (default: all columns). ``rng_seed`` is accepted for
    interface symmetry; the greedy growth is fully deterministic.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2:
        raise DimensionMismatch("X must be 2-D")
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if X.shape[0] == 0:
        raise EmptyTrainingSet("no training rows")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    features = sorted(range(X.shape[1]) if feature_subset is None else set(feature_subset))
    if not features:
        raise ValueError("feature_subset must be non-empty")
    if features[0] < 0 or features[-1] >= X.shape[1]:
        raise DimensionMismatch("feature index out of range")

    n_root = X.shape[0]
    feature, threshold, left, right, counts = [], [], [], [], []
    importance = np.zeros(X.shape[1])

    def new_node(rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y[rows], minlength=n_classes))
        return len(feature) - 1

    stack = [(new_node(np.arange(n_root)), np.arange(n_root), 0)]
    while stack:
        node, rows, depth = stack.pop()
        node_counts = counts[node]
        if depth >= params.max_depth or np.count_nonzero(node_counts) <= 1 \
                or len(rows) < 2 * params.min_leaf:
            continue
        split = _best_split(X[rows], y[rows], n_classes, features, params.min_leaf)
        if split is None:
            continue
        f, thr, child_impurity = split
        parent_impurity = float(_gini_from_counts(node_counts[None], np.array([len(rows)]))[0])
        mask = X[rows, f] <= thr
        feature[node] = f
        threshold[node] = thr
        importance[f] += len(rows) / n_root * max(parent_impurity - child_impurity, 0.0)
        li = new_node(rows[mask])
        ri = new_node(rows[~mask])
        left[node], right[node] = li, ri
        # push right first so the left subtree is numbered first
        stack.append((ri, rows[~mask], depth + 1))
        stack.append((li, rows[mask], depth + 1))

    feature_arr = np.asarray(feature, dtype=np.int64)
    n_branches = int(np.sum(feature_arr >= 0))
    if n_branches:
        importance /= n_branches
    return DecisionTree(feature_arr, np.asarray(threshold, dtype=np.float64),
                        np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
                        np.vstack(counts).astype(np.int64), importance, X.shape[1])


@dataclass
class BaggedEnsemble:
    trees: list[DecisionTree]
    feature_subsets: list[list[int]]   # 0-based columns per tree
    label_set: tuple[str, ...]
    params: EnsembleParams = field(default_factory=EnsembleParams)

    @property
    def importance(self) -> np.ndarray:
        return feature_importance(self)

    def votes(self, X) -> np.ndarray:
        """``(n_rows, n_classes)`` vote counts."""
        if not self.trees:
            raise UnfittedModel("ensemble has no trees")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        k = len(self.label_set)
        out = np.zeros((X.shape[0], k), dtype=np.int64)
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            np.add.at(out, (rows, tree.predict_index(X)), 1)
        return out

    def predict_index(self, X) -> np.ndarray:
        return np.argmax(self.votes(X), axis=1)

    def predict(self, X) -> list[str]:
        return [self.label_set[i] for i in self.predict_index(X)]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "bagged_ensemble",
            "label_set": list(self.label_set),
            "params": asdict(self.params),
            "feature_subsets": self.feature_subsets,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> BaggedEnsemble:
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {d.get('schema_version')!r}")
        return cls([DecisionTree.from_dict(t) for t in d["trees"]],
                   [list(s) for s in d["feature_subsets"]], tuple(d["label_set"]),
                   EnsembleParams(**d["params"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> BaggedEnsemble:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _encode_labels(y, label_set) -> np.ndarray:
    lookup = {lab: i for i, lab in enumerate(label_set)}
    try:
        return np.array([lookup[v] for v in y], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]!r} not in label_set") from None


def fit_bagged_ensemble(X, y, rng_seed: int = 0, params: EnsembleParams = EnsembleParams(),
                        label_set: Sequence | None = None, n_jobs: int = 1) -> BaggedEnsemble:
    """Fit ``params.n_trees`` trees on bootstrap resamples with random feature subsets.

    Per-tree randomness comes from ``SeedSequence(rng_seed).spawn``, so the
    model is identical for any ``n_jobs``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = list(y)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise DimensionMismatch(f"X has shape {X.shape} but {len(y)} labels")
    if X.shape[0] == 0:
        raise EmptyTrainingSet("no training rows")
    if label_set is None:
        label_set = sorted(set(y))
    labels = tuple(v.item() if isinstance(v, np.generic) else v for v in label_set)
    yi = _encode_labels(y, labels)
    n, d = X.shape
    k = params.features_per_tree
    k = d if k is None else min(k, d)
    seeds = np.random.SeedSequence(rng_seed).spawn(params.n_trees)

    def draw(seq):
        rng = np.random.default_rng(seq)
        rows = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
        cols = np.sort(rng.choice(d, size=k, replace=False)) if k < d else np.arange(d)
        return rows, [int(c) for c in cols]

    draws = [draw(s) for s in seeds]

    def fit_one(item):
        rows, cols = item
        return fit_decision_tree(X[rows], yi[rows], cols, len(labels), params.tree_params())

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(fit_one, draws))
    else:
        trees = [fit_one(item) for item in draws]
    return BaggedEnsemble(trees, [cols for _, cols in draws], labels, params)


def predict_majority(m: BaggedEnsemble, x) -> str:
    return m.predict(np.atleast_2d(x))[0]


def feature_importance(m: BaggedEnsemble) -> np.ndarray:
    if not m.trees:
        raise UnfittedModel("ensemble has no trees")
    return np.mean([t.importance for t in m.trees], axis=0)
