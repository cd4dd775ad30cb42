"""Bagged regression trees with random feature subsets per split."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import Model, ModelError, check_xy

TREE_COUNTS = (10, 50, 100, 500, 1000)
MAX_FEATURES = ("sqrt", "log2")
SEEDS = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 10
    max_features: str = "log2"
    seed: int = 0
    min_samples_leaf: int = 2
    allow_off_grid: bool = False

    kind = "forest"

    def __post_init__(self) -> None:
        if self.max_features not in MAX_FEATURES:
            raise ModelError(f"max_features must be one of {MAX_FEATURES}, got {self.max_features!r}")
        if self.n_trees < 1 or self.min_samples_leaf < 1:
            raise ModelError("n_trees and min_samples_leaf must be positive")
        if not self.allow_off_grid and self.n_trees not in TREE_COUNTS:
            raise ModelError(f"n_trees={self.n_trees} is off the grid {TREE_COUNTS}")

    def features_per_split(self, n_features: int) -> int:
        if self.max_features == "sqrt":
            m = math.ceil(math.sqrt(n_features))
        else:
            m = math.ceil(math.log2(n_features)) if n_features > 1 else 1
        return max(1, min(n_features, m))

    def grid_key(self) -> tuple:
        # fewer trees, then fewer candidate features, then lower seed
        return (self.n_trees, 0 if self.max_features == "log2" else 1, self.seed)


class DecisionTree:
    """Array-backed binary regression tree.

    ``left[k] == -1`` marks a leaf whose prediction is ``value[k]``; internal
    nodes send ``x[feature] <= threshold`` to the left child.
    """

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def node_count(self) -> int:
        return self.value.size

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        node = np.zeros(x.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.left[node] >= 0)
        while active.size:
            cur = node[active]
            go_left = x[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.left[node[active]] >= 0]
        return self.value[node]


def _best_split(xn: np.ndarray, yn: np.ndarray, min_leaf: int):
    """Best (column, threshold, sse) over the columns of ``xn``, or None."""
    n = yn.size
    order = np.argsort(xn, axis=0, kind="stable")
    xs = xn[order, np.arange(xn.shape[1])]
    ys = yn[order]
    csum = np.cumsum(ys, axis=0)
    csq = np.cumsum(ys * ys, axis=0)
    total, total_sq = csum[-1], csq[-1]
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    left_sum = csum[:-1]
    right_sum = total - left_sum
    sse = (csq[:-1] - left_sum**2 / n_left) + ((total_sq - csq[:-1]) - right_sum**2 / (n - n_left))
    valid = xs[:-1] < xs[1:]
    if min_leaf > 1:
        valid[: min_leaf - 1] = False
        valid[n - min_leaf:] = False
    if not valid.any():
        return None
    sse[~valid] = np.inf
    # column-major scan: ties go to the earlier candidate column
    flat = int(np.argmin(sse.T))
    col, pos = divmod(flat, n - 1)
    lo, hi = xs[pos, col], xs[pos + 1, col]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return col, float(thr), float(sse[pos, col])


def _mean(v: np.ndarray) -> float:
    return float(np.add.reduce(v)) / v.size


def grow_tree(x: np.ndarray, y: np.ndarray, sample: np.ndarray, m: int, min_leaf: int,
              rng: np.random.Generator) -> DecisionTree:
    """Grow an unpruned tree on the rows ``sample`` (duplicates allowed)."""
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(val: float) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(val)
        return len(value) - 1

    root = new_node(_mean(y[sample]))
    stack = [(root, sample)]
    while stack:
        node, idx = stack.pop()
        yn = y[idx]
        if idx.size < 2 * min_leaf or np.ptp(yn) == 0:
            continue
        xn = x[idx]
        live = np.flatnonzero(np.ptp(xn, axis=0) > 0)
        if live.size == 0:
            continue
        cand = rng.choice(live, size=min(m, live.size), replace=False)
        found = _best_split(xn[:, cand], yn, min_leaf)
        if found is None:
            continue
        col, thr, _ = found
        f = int(cand[col])
        go_left = xn[:, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(_mean(y[li]))
        right[node] = new_node(_mean(y[ri]))
        stack.append((right[node], ri))
        stack.append((left[node], li))
    return DecisionTree(feature, threshold, left, right, value)


class ForestModel(Model):
    kind = "forest"

    def __init__(self, trees: list[DecisionTree], config: ForestConfig, n_features: int):
        if not trees:
            raise ModelError("a forest needs at least one tree")
        self.trees = trees
        self.config = config
        self.n_features = n_features

    def _predict(self, x: np.ndarray) -> np.ndarray:
        # sequential accumulation so the result is the plain running-sum mean
        total = np.zeros(x.shape[0])
        for tree in self.trees:
            total += tree.predict(x)
        return total / len(self.trees)

    def __repr__(self) -> str:
        return f"ForestModel(n_trees={len(self.trees)}, max_features={self.config.max_features!r})"


def fit_forest(x, y, config: ForestConfig | None = None) -> ForestModel:
    config = config or ForestConfig()
    x, y = check_xy(x, y)
    n, p = x.shape
    m = config.features_per_split(p)
    children = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    trees = []
    for ss in children:
        rng = np.random.default_rng(ss)
        sample = rng.integers(0, n, size=n)
        trees.append(grow_tree(x, y, sample, m, config.min_samples_leaf, rng))
    return ForestModel(trees, config, p)
