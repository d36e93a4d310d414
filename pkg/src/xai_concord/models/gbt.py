"""Second-order gradient boosting of regression trees for binary log-loss."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from xai_concord.dataset import Dataset
from xai_concord.errors import ModelError
from xai_concord.models.config import TrainConfig
from xai_concord.models.linear import logistic_loss

BASE_SCORE_CLIP = 10.0


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Array-encoded binary tree.

    Node ``i`` is a leaf when ``feature[i] == -1``; otherwise samples with
    ``x[feature[i]] < threshold[i]`` go to ``left[i]`` and the rest to
    ``right[i]``. Node 0 is the root.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        for name, dtype in (("feature", np.int64), ("left", np.int64), ("right", np.int64),
                            ("threshold", float), ("value", float)):
            a = np.array(getattr(self, name), dtype=dtype).reshape(-1)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        m = self.feature.size
        if not all(a.size == m for a in (self.threshold, self.left, self.right, self.value)) or m == 0:
            raise ModelError("tree arrays must be non-empty and of equal length")
        if not np.all(np.isfinite(self.value)):
            raise ModelError("leaf weights must be finite")

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def is_leaf(self, i: int) -> bool:
        return self.feature[i] < 0

    @cached_property
    def depth(self) -> int:
        def walk(i):
            return 0 if self.feature[i] < 0 else 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    @cached_property
    def used_features(self) -> tuple:
        return tuple(sorted({int(f) for f in self.feature if f >= 0}))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            go_left = X[rows, np.where(internal, f, 0)] < self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


@dataclass(frozen=True, eq=False)
class TreeEnsemble:
    trees: tuple
    learning_rate: float
    base_score: float
    reg_lambda: float
    d: int

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        if not 0 < self.learning_rate <= 1:
            raise ModelError("learning_rate must lie in (0, 1]")
        if self.reg_lambda < 0:
            raise ModelError("reg_lambda must be nonnegative")
        for t in self.trees:
            if np.any(t.feature >= self.d):
                raise ModelError("tree references a feature index outside the model dimension")

    def raw(self, X: np.ndarray) -> np.ndarray:
        out = np.full(X.shape[0], self.base_score, dtype=float)
        if self.trees:
            out += self.learning_rate * self._stacked_predict(X)
        return out

    @cached_property
    def _stack(self):
        T = len(self.trees)
        m = max(t.n_nodes for t in self.trees)
        feat = np.full((T, m), -1, dtype=np.int64)
        thr = np.zeros((T, m))
        left = np.zeros((T, m), dtype=np.int64)
        right = np.zeros((T, m), dtype=np.int64)
        val = np.zeros((T, m))
        for k, t in enumerate(self.trees):
            s = slice(0, t.n_nodes)
            feat[k, s], thr[k, s], left[k, s], right[k, s], val[k, s] = (
                t.feature, t.threshold, t.left, t.right, t.value)
        depth = max(t.depth for t in self.trees)
        return feat, thr, left, right, val, depth

    def _stacked_predict(self, X: np.ndarray) -> np.ndarray:
        feat, thr, left, right, val, depth = self._stack
        T, N = feat.shape[0], X.shape[0]
        tix = np.arange(T)[:, None]
        rows = np.arange(N)[None, :]
        node = np.zeros((T, N), dtype=np.int64)
        for _ in range(depth):
            f = feat[tix, node]
            internal = f >= 0
            xv = X[rows, np.where(internal, f, 0)]
            nxt = np.where(xv < thr[tix, node], left[tix, node], right[tix, node])
            node = np.where(internal, nxt, node)
        # Sum trees in order so the result matches the per-tree loop bit for bit.
        leaf_vals = val[tix, node]
        out = np.zeros(N)
        for k in range(T):
            out += leaf_vals[k]
        return out


def base_score_for(labels: np.ndarray) -> float:
    """Clipped log-odds of the positive-label rate."""
    p = float(np.mean(labels))
    with np.errstate(divide="ignore"):
        logit = np.log(p) - np.log1p(-p)
    return float(np.clip(logit, -BASE_SCORE_CLIP, BASE_SCORE_CLIP))


def _best_split(X, g, h, idx, reg_lambda):
    G, H = g[idx].sum(), h[idx].sum()
    parent = G * G / (H + reg_lambda) if H + reg_lambda > 0 else 0.0
    best = (0.0, -1, 0.0)
    for j in range(X.shape[1]):
        order = idx[np.argsort(X[idx, j], kind="stable")]
        xs = X[order, j]
        distinct = xs[:-1] < xs[1:]
        if not distinct.any():
            continue
        GL = np.cumsum(g[order])[:-1]
        HL = np.cumsum(h[order])[:-1]
        GR, HR = G - GL, H - HL
        dl, dr = HL + reg_lambda, HR + reg_lambda
        ok = distinct & (dl > 0) & (dr > 0)
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = 0.5 * (GL * GL / dl + GR * GR / dr - parent)
        gain = np.where(ok, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best[0]:
            thr = 0.5 * (xs[k] + xs[k + 1])
            if not xs[k] < thr:
                thr = xs[k + 1]
            best = (float(gain[k]), j, float(thr))
    return best


def leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    """Newton leaf weight ``-G / (H + reg_lambda)``."""
    denom = H + reg_lambda
    return float(-G / denom) if denom > 0 else 0.0


def fit_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, max_depth: int, reg_lambda: float) -> RegressionTree:
    """Grow one tree by exact greedy search over all midpoint thresholds.

    A node splits only when the best gain is strictly positive.
    """
    feature, threshold, left, right, value = [], [], [], [], []

    def grow(idx, depth):
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(leaf_weight(g[idx].sum(), h[idx].sum(), reg_lambda))
        if depth >= max_depth or idx.size < 2:
            return node
        gain, j, thr = _best_split(X, g, h, idx, reg_lambda)
        if j < 0 or gain <= 0:
            return node
        mask = X[idx, j] < thr
        feature[node], threshold[node], value[node] = j, thr, 0.0
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(X.shape[0]), 0)
    return RegressionTree(feature, threshold, left, right, value)


def train_gbt(
    data: Dataset,
    rounds: int = 50,
    max_depth: int = 3,
    cfg: TrainConfig | None = None,
    reg_lambda: float = 1.0,
    callback: Callable[[int, float], None] | None = None,
) -> TreeEnsemble:
    """Boost ``rounds`` trees on logistic gradients ``p - y`` and hessians ``p(1-p)``.

    ``callback(round, train_logloss)`` fires for the base score (round 0) and
    after every round.
    """
    cfg = cfg or TrainConfig(learning_rate=0.1)
    if data.n < 1:
        raise ModelError("cannot train on an empty dataset")
    if rounds < 0 or max_depth < 0:
        raise ModelError("rounds and max_depth must be nonnegative")
    if cfg.learning_rate > 1:
        raise ModelError("boosting learning_rate must lie in (0, 1]")
    X = data.rows
    y = data.labels.astype(float)
    base = base_score_for(y)
    raw = np.full(data.n, base)
    if callback:
        callback(0, logistic_loss(raw, y))
    trees = []
    for r in range(1, rounds + 1):
        p = _sigmoid(raw)
        g = p - y
        h = p * (1.0 - p)
        tree = fit_tree(X, g, h, max_depth, reg_lambda)
        trees.append(tree)
        raw = raw + cfg.learning_rate * tree.predict(X)
        if callback:
            callback(r, logistic_loss(raw, y))
    return TreeEnsemble(tuple(trees), cfg.learning_rate, base, reg_lambda, data.d)


def _sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * s))


def staged_raw(model: TreeEnsemble, X: np.ndarray):
    """Yield the training-time raw scores before round 1, after round 1, and so on.

    Accumulates exactly as :func:`train_gbt` does, so gradients recomputed
    from these scores match the ones each tree was fitted to.
    """
    raw = np.full(X.shape[0], model.base_score)
    yield raw
    for tree in model.trees:
        raw = raw + model.learning_rate * tree.predict(X)
        yield raw
