"""Per-instance attributions of a model's raw score.

Four explainers are provided: exact Shapley values by subset enumeration,
Monte-Carlo permutation Shapley values, Deep Taylor Decomposition for ReLU
networks, and coefficient-times-deviation attribution for linear models.
Shapley values use the interventional value function: features outside a
coalition are filled in from background rows and the score is averaged.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from math import factorial
from pathlib import Path

import numpy as np

from xai_concord.dataset import Dataset, input_bounds as dataset_bounds, make_rng
from xai_concord.errors import ExplainerError
from xai_concord.models import LinearModel, NeuralNet, TreeEnsemble, model_dim, raw_score
from xai_concord.models.nn import LINEAR_LAYERS, ReLU
from xai_concord.seeding import derive_seed

SHAPLEY_EXACT = "shapley_exact"
SHAPLEY_SAMPLED = "shapley_sampled"
DTD = "dtd"
LINEAR_COEF = "linear_coef"
KINDS = (SHAPLEY_EXACT, SHAPLEY_SAMPLED, DTD, LINEAR_COEF)

MAX_EXACT_FEATURES = 20
DTD_EPSILON = 1e-9

# Upper bound on composite rows pushed through a model in one call.
_CHUNK_ROWS = 1 << 18


@dataclass(frozen=True, eq=False)
class Background:
    rows: np.ndarray

    def __post_init__(self):
        r = np.array(self.rows, dtype=float)
        if r.ndim != 2 or r.shape[0] < 1:
            raise ExplainerError("background needs at least one row")
        r.setflags(write=False)
        object.__setattr__(self, "rows", r)

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.rows.mean(axis=0)


def sample_background(data: Dataset, size: int, seed: int) -> Background:
    """Up to ``size`` training rows, drawn without replacement, in ascending row order."""
    if data.n < 1:
        raise ExplainerError("cannot draw a background from an empty dataset")
    if size < 1:
        raise ExplainerError("background size must be positive")
    if data.n <= size:
        return Background(data.rows)
    idx = np.sort(make_rng(seed).choice(data.n, size=size, replace=False))
    return Background(data.rows[idx])


@dataclass(frozen=True, eq=False)
class AttributionVector:
    values: np.ndarray
    explained_quantity: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ExplainerError("attribution contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "explained_quantity", float(self.explained_quantity))


@dataclass(frozen=True, eq=False)
class AttributionMatrix:
    values: np.ndarray  # (n, d)
    explained: np.ndarray  # (n,)
    kind: str
    feature_names: tuple = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        e = np.array(self.explained, dtype=float).reshape(-1)
        if v.ndim != 2 or e.shape != (v.shape[0],):
            raise ExplainerError(f"attribution matrix shape {v.shape} does not match {e.size} explained values")
        if self.kind not in KINDS:
            raise ExplainerError(f"unknown explainer kind {self.kind!r}")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(v.shape[1]))
        if len(names) != v.shape[1]:
            raise ExplainerError("feature name count does not match attribution width")
        v.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "explained", e)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def row(self, i: int) -> AttributionVector:
        return AttributionVector(self.values[i], self.explained[i])

    def __iter__(self):
        return (self.row(i) for i in range(self.n))

    def to_csv(self, path) -> Path:
        """One row per instance, feature columns then ``explained_quantity``."""
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(self.feature_names) + ["explained_quantity"])
            for vals, e in zip(self.values, self.explained):
                w.writerow([repr(float(v)) for v in vals] + [repr(float(e))])
        return path


@dataclass(frozen=True)
class ExplainConfig:
    permutations: int = 1000
    seed: int = 0
    dtd_epsilon: float = DTD_EPSILON
    input_bounds: np.ndarray | None = None
    shapley_method: str = "auto"


def _check_x(model, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    d = model_dim(model)
    if x.size != d:
        raise ExplainerError(f"instance has {x.size} features, model expects {d}")
    return x


def _check_background(model, background: Background):
    if background.rows.shape[1] != model_dim(model):
        raise ExplainerError(
            f"background has {background.rows.shape[1]} columns, model expects {model_dim(model)}")


def coalition_value(model, x, subset, background: Background) -> float:
    """Mean raw score over background rows with the features in ``subset`` set from ``x``."""
    x = _check_x(model, x)
    _check_background(model, background)
    idx = np.array(sorted(set(int(j) for j in subset)), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.size):
        raise ExplainerError(f"subset {sorted(idx.tolist())} out of range for d={x.size}")
    if idx.size == x.size:
        # no background column survives; skip averaging identical scores
        return float(raw_score(model, x))
    comp = np.array(background.rows)
    comp[:, idx] = x[idx]
    return float(np.mean(raw_score(model, comp)))


def _masks(d: int) -> np.ndarray:
    """(2^d, d) boolean membership table; row ``s`` is the bitmask ``s``."""
    s = np.arange(1 << d)
    return ((s[:, None] >> np.arange(d)) & 1).astype(bool)


def _shapley_weights(d: int) -> np.ndarray:
    return np.array([factorial(k) * factorial(d - k - 1) / factorial(d) for k in range(d)])


def _shapley_from_values(v: np.ndarray, d: int) -> np.ndarray:
    """Shapley values from subset values ``v`` of shape (..., 2^d)."""
    sizes = _masks(d).sum(axis=1)
    weights = _shapley_weights(d)
    s = np.arange(1 << d)
    phi = np.zeros(v.shape[:-1] + (d,))
    for j in range(d):
        without = s[(s >> j) & 1 == 0]
        w = weights[sizes[without]]
        phi[..., j] = (v[..., without | (1 << j)] - v[..., without]) @ w
    return phi


def _subset_values(model, X: np.ndarray, background: Background) -> np.ndarray:
    """v(S) for every instance row and every subset S, shape (B, 2^d)."""
    B, d = X.shape
    masks = _masks(d)
    n_sub, m = masks.shape[0], background.m
    R = background.rows[None, None, :, :]
    out = np.empty((B, n_sub))
    per_instance = n_sub * m
    if per_instance <= _CHUNK_ROWS:
        step = _CHUNK_ROWS // per_instance
        for start in range(0, B, step):
            xb = X[start:start + step]
            comp = np.where(masks[None, :, None, :], xb[:, None, None, :], R)
            scores = raw_score(model, comp.reshape(-1, d)).reshape(xb.shape[0], n_sub, m)
            out[start:start + step] = scores.mean(axis=2)
        return out
    sub_step = max(1, _CHUNK_ROWS // m)
    for i in range(B):
        for s0 in range(0, n_sub, sub_step):
            mk = masks[s0:s0 + sub_step]
            comp = np.where(mk[:, None, :], X[i][None, None, :], background.rows[None, :, :])
            out[i, s0:s0 + mk.shape[0]] = raw_score(model, comp.reshape(-1, d)).reshape(mk.shape[0], m).mean(axis=1)
    return out


def _tree_shapley(model: TreeEnsemble, X: np.ndarray, background: Background) -> np.ndarray:
    """Exact interventional Shapley values of a tree ensemble.

    Each tree's value function depends only on the features that tree splits
    on, so the ensemble game is a sum of small games whose other players are
    null. Enumerating subsets of each tree's own features gives the same
    values as full enumeration at a fraction of the cost.
    """
    B, d = X.shape
    R = background.rows
    m = R.shape[0]
    phi = np.zeros((B, d))
    step = max(1, _CHUNK_ROWS // m)
    for tree in model.trees:
        used = tree.used_features
        if not used:
            continue
        u = len(used)
        pos = {f: k for k, f in enumerate(used)}
        feat, thr = tree.feature, tree.threshold
        internal = feat >= 0
        node_pos = np.array([pos[int(f)] if f >= 0 else 0 for f in feat])
        masks = _masks(u)
        dr = R[:, np.where(internal, feat, 0)] < thr  # (m, nodes)
        for start in range(0, B, step):
            xb = X[start:start + step]
            b = xb.shape[0]
            dx = xb[:, np.where(internal, feat, 0)] < thr  # (b, nodes)
            v = np.empty((b, 1 << u))
            bi = np.arange(b)[:, None]
            ri = np.arange(m)[None, :]
            for s in range(1 << u):
                in_s = masks[s][node_pos] & internal
                node = np.zeros((b, m), dtype=np.int64)
                for _ in range(tree.depth):
                    go_left = np.where(in_s[node], dx[bi, node], dr[ri, node])
                    nxt = np.where(go_left, tree.left[node], tree.right[node])
                    node = np.where(internal[node], nxt, node)
                v[:, s] = tree.value[node].mean(axis=1)
            phi[start:start + b, np.array(used)] += _shapley_from_values(v, u)
    return model.learning_rate * phi


def _exact_batch(model, X: np.ndarray, background: Background, method: str = "auto") -> np.ndarray:
    d = X.shape[1]
    if d > MAX_EXACT_FEATURES:
        raise ExplainerError(
            f"exact enumeration over d={d} features (2^{d} subsets) is refused above "
            f"{MAX_EXACT_FEATURES}; use shapley_sampled instead")
    if method not in ("auto", "enumerate"):
        raise ExplainerError(f"unknown exact Shapley method {method!r}")
    if method == "auto" and isinstance(model, TreeEnsemble):
        return _tree_shapley(model, X, background)
    return _shapley_from_values(_subset_values(model, X, background), d)


def shapley_exact(model, x, background: Background, method: str = "auto") -> AttributionVector:
    """Exact Shapley values of :func:`coalition_value` over all 2^d coalitions.

    ``method="enumerate"`` forces the generic enumeration; ``"auto"`` uses
    the per-tree decomposition for tree ensembles.
    """
    x = _check_x(model, x)
    _check_background(model, background)
    phi = _exact_batch(model, x[None, :], background, method)[0]
    return AttributionVector(phi, raw_score(model, x))


def shapley_sampled(model, x, background: Background, permutations: int, seed: int) -> AttributionVector:
    """Permutation-sampling estimate of the Shapley values.

    Each sampled ordering credits every feature with the change in coalition
    value when it joins; credits are averaged over orderings. Per ordering
    the credits telescope to v(all) - v(none).
    """
    x = _check_x(model, x)
    _check_background(model, background)
    if permutations < 1:
        raise ExplainerError("permutations must be at least 1")
    d, m = x.size, background.m
    rng = make_rng(seed)
    phi = np.zeros(d)
    v_empty = float(np.mean(raw_score(model, background.rows)))
    v_full = raw_score(model, x)
    per_perm = max(d - 1, 0) * m
    step = max(1, _CHUNK_ROWS // max(per_perm, 1))
    done = 0
    while done < permutations:
        k = min(step, permutations - done)
        perms = np.stack([rng.permutation(d) for _ in range(k)])  # (k, d)
        # membership[p, t, j]: feature j is in the first t+1 features of ordering p
        rank = np.argsort(perms, axis=1)
        member = rank[:, None, :] <= np.arange(d)[None, :, None]  # (k, d, d)
        v = np.empty((k, d + 1))
        v[:, 0] = v_empty
        v[:, d] = v_full
        if d > 1:
            inner = member[:, :-1, :]
            comp = np.where(inner[:, :, None, :], x[None, None, None, :], background.rows[None, None, :, :])
            v[:, 1:d] = raw_score(model, comp.reshape(-1, d)).reshape(k, d - 1, m).mean(axis=2)
        gains = np.diff(v, axis=1)  # gains[p, t] belongs to feature perms[p, t]
        np.add.at(phi, perms.ravel(), gains.ravel())
        done += k
    return AttributionVector(phi / permutations, v_full)


def _linear_layers(net: NeuralNet):
    for layer in net.layers:
        if not isinstance(layer, LINEAR_LAYERS + (ReLU,)):
            raise ExplainerError(f"DTD supports dense, conv1d and ReLU layers only, found {type(layer).__name__}")
    return [i for i, l in enumerate(net.layers) if isinstance(l, LINEAR_LAYERS)]


def _stabilize(z: np.ndarray, eps: float) -> np.ndarray:
    return z + eps * np.where(z >= 0, 1.0, -1.0)


def dtd_batch(net: NeuralNet, X: np.ndarray, bounds: np.ndarray, eps: float = DTD_EPSILON) -> tuple:
    """Deep Taylor relevance of every input for each row of ``X``.

    Relevance starts as the raw score, passes backward through hidden linear
    layers with the z+ rule and through the first layer with the bounded
    z^B rule. Returns ``(relevance (n, d), raw scores (n,))``.
    """
    if not isinstance(net, NeuralNet):
        raise ExplainerError("DTD requires a NeuralNet")
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.d:
        raise ExplainerError(f"input has {X.shape[-1]} features, network expects {net.d}")
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if bounds.shape[0] != net.d:
        raise ExplainerError(f"{bounds.shape[0]} input bounds given for {net.d} features")
    lo, hi = bounds[:, 0], bounds[:, 1]
    if np.any(lo > hi):
        raise ExplainerError("input bounds need lower <= upper")
    clipped = np.clip(X, lo, hi)
    if not np.array_equal(clipped, X):
        warnings.warn("DTD input outside the given bounds; clamped", RuntimeWarning, stacklevel=2)
        X = clipped
    linear_idx = _linear_layers(net)
    acts = net.forward(X)
    raw = acts[-1][:, 0]
    R = raw[:, None]
    for pos in reversed(range(len(linear_idx))):
        li = linear_idx[pos]
        W = net.layers[li].matrix
        a = acts[li]
        Wp = np.maximum(W, 0.0)
        if pos > 0:
            z = a @ Wp.T
            s = R / _stabilize(z, eps)
            R = a * (s @ Wp)
        else:
            Wn = np.minimum(W, 0.0)
            z = a @ W.T - lo @ Wp.T - hi @ Wn.T
            s = R / _stabilize(z, eps)
            R = a * (s @ W) - lo * (s @ Wp) - hi * (s @ Wn)
    return R, raw


def dtd_attribute(network: NeuralNet, x, input_bounds, eps: float = DTD_EPSILON) -> AttributionVector:
    """Deep Taylor Decomposition of one instance (see :func:`dtd_batch`)."""
    if not isinstance(network, NeuralNet):
        raise ExplainerError("DTD requires a NeuralNet")
    x = _check_x(network, x)
    R, raw = dtd_batch(network, x[None, :], input_bounds, eps)
    return AttributionVector(R[0], raw[0])


def linear_attribute(model: LinearModel, x, background: Background) -> AttributionVector:
    """``w_j * (x_j - mean(background_j))``."""
    if not isinstance(model, LinearModel):
        raise ExplainerError("linear attribution requires a LinearModel")
    x = _check_x(model, x)
    _check_background(model, background)
    return AttributionVector(model.weights * (x - background.mean), raw_score(model, x))


def check_pairing(model, kind: str) -> None:
    if kind not in KINDS:
        raise ExplainerError(f"unknown explainer kind {kind!r}; choose from {', '.join(KINDS)}")
    if kind == DTD and not isinstance(model, NeuralNet):
        raise ExplainerError(f"dtd explains NeuralNet models only, got {type(model).__name__}")
    if kind == LINEAR_COEF and not isinstance(model, LinearModel):
        raise ExplainerError(f"linear_coef explains LinearModel models only, got {type(model).__name__}")


def explain_dataset(model, data: Dataset, kind: str, background: Background | None,
                    cfg: ExplainConfig | None = None) -> AttributionMatrix:
    """Attribute every row of ``data`` independently.

    Sampled Shapley row ``i`` uses seed ``derive_seed(cfg.seed, kind, i)``,
    so any row subset or execution order reproduces the same vectors.
    """
    cfg = cfg or ExplainConfig()
    check_pairing(model, kind)
    if data.n < 1:
        raise ExplainerError("cannot explain an empty dataset")
    X = data.rows
    if X.shape[1] != model_dim(model):
        raise ExplainerError(f"dataset has {X.shape[1]} features, model expects {model_dim(model)}")
    if kind in (SHAPLEY_EXACT, SHAPLEY_SAMPLED, LINEAR_COEF):
        if background is None:
            raise ExplainerError(f"{kind} needs a background sample")
        _check_background(model, background)
    if kind == SHAPLEY_EXACT:
        values = _exact_batch(model, X, background, cfg.shapley_method)
        explained = raw_score(model, X)
    elif kind == SHAPLEY_SAMPLED:
        vecs = [shapley_sampled(model, X[i], background, cfg.permutations, derive_seed(cfg.seed, kind, i))
                for i in range(data.n)]
        values = np.stack([v.values for v in vecs])
        explained = np.array([v.explained_quantity for v in vecs])
    elif kind == DTD:
        bounds = dataset_bounds(data) if cfg.input_bounds is None else cfg.input_bounds
        values, explained = dtd_batch(model, X, bounds, cfg.dtd_epsilon)
    else:
        values = model.weights * (X - background.mean)
        explained = raw_score(model, X)
    return AttributionMatrix(values, explained, kind, tuple(data.names))


def dtd_conservation_gap(matrix: AttributionMatrix) -> np.ndarray:
    """Per-row ``sum(relevance) - raw score``."""
    return matrix.values.sum(axis=1) - matrix.explained


__all__ = [
    "AttributionMatrix",
    "AttributionVector",
    "Background",
    "ExplainConfig",
    "KINDS",
    "check_pairing",
    "coalition_value",
    "dtd_attribute",
    "dtd_batch",
    "explain_dataset",
    "linear_attribute",
    "sample_background",
    "shapley_exact",
    "shapley_sampled",
]
