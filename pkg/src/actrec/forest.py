"""Gini decision trees with bagging and random-subspace ensembling.

Trees are stored as flat arrays (feature, threshold, left, right, leaf counts);
node 0 is the root and leaves have ``feature == -1``.  The builder and the
predictor are compiled with numba.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .domain import InvariantError

BAGGING = "bagging"
RANDOM_SUBSPACE = "random_subspace"
PER_TREE = "per_tree"
PER_NODE = "per_node"


@njit(cache=True, nogil=True)
def _best_split(X, y, idx, feats, n_labels, min_leaf):
    """Best Gini split of ``idx`` over ``feats``; returns (feature, threshold, score).

    ``score`` is sum_c nL_c^2/nL + sum_c nR_c^2/nR, which is maximal exactly
    where the weighted child Gini impurity is minimal.  Feature -1 means no
    admissible split.  Ties keep the first candidate found.
    """
    m = idx.shape[0]
    total = np.zeros(n_labels, dtype=np.int64)
    for i in range(m):
        total[y[idx[i]]] += 1
    best_f = -1
    best_t = 0.0
    best_s = -1.0
    vals = np.empty(m)
    left = np.zeros(n_labels, dtype=np.int64)
    for fi in range(feats.shape[0]):
        f = feats[fi]
        for i in range(m):
            vals[i] = X[idx[i], f]
        order = np.argsort(vals, kind="mergesort")
        left[:] = 0
        sq_l = 0
        sq_r = 0
        for c in range(n_labels):
            sq_r += total[c] * total[c]
        for pos in range(m - 1):
            c = y[idx[order[pos]]]
            sq_l += 2 * left[c] + 1
            sq_r -= 2 * (total[c] - left[c]) - 1
            left[c] += 1
            n_l = pos + 1
            n_r = m - n_l
            v0 = vals[order[pos]]
            v1 = vals[order[pos + 1]]
            if v0 == v1 or n_l < min_leaf or n_r < min_leaf:
                continue
            s = sq_l / n_l + sq_r / n_r
            if s > best_s:
                best_s = s
                best_f = f
                t = 0.5 * (v0 + v1)
                if not (t < v1):
                    t = v0
                best_t = t
    return best_f, best_t, best_s


@njit(cache=True, nogil=True)
def _build(X, y, sample_idx, feats, n_labels, min_leaf, node_k, seed):
    """Grow one tree; ``node_k > 0`` samples that many of ``feats`` at every node."""
    n = sample_idx.shape[0]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    counts = np.zeros((cap, n_labels), dtype=np.int64)
    if node_k > 0:
        np.random.seed(seed)
    pool = feats.copy()

    stack_idx = [sample_idx]
    stack_node = [0]
    n_nodes = 1
    while len(stack_node) > 0:
        idx = stack_idx.pop()
        node = stack_node.pop()
        m = idx.shape[0]
        for i in range(m):
            counts[node, y[idx[i]]] += 1
        pure = False
        for c in range(n_labels):
            if counts[node, c] == m:
                pure = True
        if pure or m < 2 * min_leaf:
            continue
        if node_k > 0 and node_k < pool.shape[0]:
            # partial Fisher-Yates
            for i in range(node_k):
                j = i + np.random.randint(pool.shape[0] - i)
                tmp = pool[i]
                pool[i] = pool[j]
                pool[j] = tmp
            cand = np.sort(pool[:node_k])
        else:
            cand = feats
        f, t, s = _best_split(X, y, idx, cand, n_labels, min_leaf)
        if f < 0:
            continue
        # zero-gain splits are kept: XOR-like nodes only separate one level further down
        n_left = 0
        for i in range(m):
            if X[idx[i], f] <= t:
                n_left += 1
        li = np.empty(n_left, dtype=np.int64)
        ri = np.empty(m - n_left, dtype=np.int64)
        a = 0
        b = 0
        for i in range(m):
            if X[idx[i], f] <= t:
                li[a] = idx[i]
                a += 1
            else:
                ri[b] = idx[i]
                b += 1
        feature[node] = f
        threshold[node] = t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_idx.append(ri)
        stack_node.append(n_nodes + 1)
        stack_idx.append(li)
        stack_node.append(n_nodes)
        n_nodes += 2
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], counts[:n_nodes]


@njit(cache=True, nogil=True)
def _predict_leaf_labels(X, feature, threshold, left, right, leaf_label, offsets):
    """Leaf label of every tree (concatenated arrays) for every row of X."""
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.empty((n, n_trees), dtype=np.int64)
    for r in range(n):
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feature[base + node] >= 0:
                if X[r, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[r, t] = leaf_label[base + node]
    return out


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, n_labels); meaningful at leaves
    features_used: np.ndarray | None = None  # per-tree subspace, if any

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def leaf_label(self) -> np.ndarray:
        # argmax returns the lowest index on ties
        return np.argmax(self.counts, axis=1).astype(np.int64)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        return _predict_leaf_labels(X, self.feature, self.threshold, self.left, self.right, self.leaf_label,
                                    np.array([0, self.n_nodes], dtype=np.int64))[:, 0]

    def to_dict(self) -> dict:
        leaves = np.flatnonzero(self.feature < 0)
        d = {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf_counts": {str(i): {str(c): int(v) for c, v in enumerate(self.counts[i]) if v}
                            for i in leaves},
        }
        if self.features_used is not None:
            d["features_used"] = self.features_used.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict, n_labels: int) -> "Tree":
        feature = np.array(d["feature"], dtype=np.int64)
        counts = np.zeros((len(feature), n_labels), dtype=np.int64)
        for i, row in d["leaf_counts"].items():
            for c, v in row.items():
                counts[int(i), int(c)] = v
        fu = d.get("features_used")
        return cls(feature, np.array(d["threshold"], dtype=float), np.array(d["left"], dtype=np.int64),
                   np.array(d["right"], dtype=np.int64), counts,
                   None if fu is None else np.array(fu, dtype=np.int64))


def fit_tree(X, y, n_labels: int, features=None, min_leaf: int = 1, sample_idx=None,
             node_k: int = 0, seed: int = 0) -> Tree:
    """Greedy Gini tree on rows ``sample_idx`` (default: all, may repeat) using ``features``."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("cannot fit a tree to zero samples")
    if min_leaf < 1:
        raise ValueError("min_leaf must be >= 1")
    feats = np.arange(X.shape[1], dtype=np.int64) if features is None else np.sort(np.asarray(features, np.int64))
    idx = np.arange(len(y), dtype=np.int64) if sample_idx is None else np.asarray(sample_idx, dtype=np.int64)
    f, t, l, r, c = _build(X, y, idx, feats, n_labels, min_leaf, node_k, seed)
    return Tree(f.copy(), t.copy(), l.copy(), r.copy(), c.copy(),
                None if features is None else feats)


def subspace_size(n_features: int) -> int:
    return max(1, int(round(math.sqrt(n_features))))


@dataclass
class Ensemble:
    n_labels: int
    n_features: int
    mode: str = RANDOM_SUBSPACE
    n_trees: int = 100
    min_leaf: int = 1
    seed: int = 0
    node_sampling: str = PER_TREE
    trees: list[Tree] = field(default_factory=list)
    _packed: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def _pack(self):
        if self._packed is None:
            sizes = [t.n_nodes for t in self.trees]
            offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
            self._packed = (
                np.concatenate([t.feature for t in self.trees]),
                np.concatenate([t.threshold for t in self.trees]),
                np.concatenate([t.left for t in self.trees]),
                np.concatenate([t.right for t in self.trees]),
                np.concatenate([t.leaf_label for t in self.trees]),
                offsets,
            )
        return self._packed

    def tree_votes(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        if not self.trees:
            raise InvariantError("ensemble has no trees")
        return _predict_leaf_labels(X, *self._pack())

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        """Fraction of trees voting for each label, shape (n, n_labels)."""
        votes = self.tree_votes(X)
        out = np.zeros((votes.shape[0], self.n_labels))
        for t in range(votes.shape[1]):
            out[np.arange(votes.shape[0]), votes[:, t]] += 1
        return out / votes.shape[1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_scores(X), axis=1)

    def to_dict(self) -> dict:
        return {"n_labels": self.n_labels, "n_features": self.n_features, "mode": self.mode,
                "n_trees": self.n_trees, "min_leaf": self.min_leaf, "seed": self.seed,
                "node_sampling": self.node_sampling, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        e = cls(d["n_labels"], d["n_features"], d["mode"], d["n_trees"], d["min_leaf"], d["seed"],
                d.get("node_sampling", PER_TREE))
        e.trees = [Tree.from_dict(t, e.n_labels) for t in d["trees"]]
        return e


def fit_ensemble(X, y, n_labels: int, mode: str = RANDOM_SUBSPACE, n_trees: int = 100, min_leaf: int = 1,
                 seed: int = 0, node_sampling: str = PER_TREE, jobs: int = 1) -> Ensemble:
    """Bagged trees; ``random_subspace`` additionally restricts each tree to sqrt(p) features.

    Tree ``i`` draws from its own generator seeded by ``(seed, i)`` so results do
    not depend on ``jobs``.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=np.int64)
    n, p = X.shape
    if n == 0:
        raise ValueError("cannot fit an ensemble to zero samples")
    if mode not in (BAGGING, RANDOM_SUBSPACE):
        raise ValueError(f"unknown ensemble mode {mode!r}")
    if node_sampling not in (PER_TREE, PER_NODE):
        raise ValueError(f"unknown node sampling {node_sampling!r}")
    k = subspace_size(p)

    def one(i: int) -> Tree:
        rng = np.random.default_rng([seed, i])
        boot = rng.integers(0, n, size=n)
        node_seed = int(rng.integers(0, 2**31 - 1))
        if mode == BAGGING:
            return fit_tree(X, y, n_labels, None, min_leaf, boot)
        if node_sampling == PER_NODE:
            return fit_tree(X, y, n_labels, None, min_leaf, boot, node_k=k, seed=node_seed)
        feats = np.sort(rng.choice(p, size=k, replace=False))
        return fit_tree(X, y, n_labels, feats, min_leaf, boot)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            trees = list(pool.map(one, range(n_trees)))
    else:
        trees = [one(i) for i in range(n_trees)]
    e = Ensemble(n_labels, p, mode, n_trees, min_leaf, seed, node_sampling)
    e.trees = trees
    return e


def predict_scores(e: Ensemble, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("predict_scores takes a single feature vector")
    return e.predict_scores(x[None, :])[0]


def predict_label(e: Ensemble, x) -> int:
    return int(np.argmax(predict_scores(e, x)))
