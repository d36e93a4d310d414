"""Small ReLU network (dense and 1-D convolution layers) trained with mini-batch SGD."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from xai_concord.dataset import Dataset, make_rng
from xai_concord.errors import ModelError
from xai_concord.models.config import TrainConfig


@dataclass(frozen=True, eq=False)
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        w = np.array(self.weight, dtype=float)
        b = np.array(self.bias, dtype=float).reshape(-1)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ModelError(f"dense layer: weight {w.shape} incompatible with bias {b.shape}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self.weight

    @property
    def offset(self) -> np.ndarray:
        return self.bias

    def params(self):
        return [self.weight, self.bias]

    def fold_grads(self, d_matrix, d_offset):
        return [d_matrix, d_offset]


@dataclass(frozen=True, eq=False)
class Conv1d:
    """Stride-1, valid-padding convolution over the feature axis.

    Input is ``in_channels * length`` values laid out channel-major; output is
    ``out_channels * (length - width + 1)`` values, also channel-major.
    """

    kernel: np.ndarray  # (out_channels, in_channels, width)
    bias: np.ndarray  # (out_channels,)
    length: int

    def __post_init__(self):
        k = np.array(self.kernel, dtype=float)
        b = np.array(self.bias, dtype=float).reshape(-1)
        if k.ndim != 3 or b.shape != (k.shape[0],):
            raise ModelError(f"conv1d layer: kernel {k.shape} incompatible with bias {b.shape}")
        if not 1 <= k.shape[2] <= self.length:
            raise ModelError(f"conv1d kernel width {k.shape[2]} does not fit input length {self.length}")
        k.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "length", int(self.length))

    @property
    def positions(self) -> int:
        return self.length - self.kernel.shape[2] + 1

    @property
    def in_dim(self) -> int:
        return self.kernel.shape[1] * self.length

    @property
    def out_dim(self) -> int:
        return self.kernel.shape[0] * self.positions

    @cached_property
    def _index(self):
        # (out_row, in_col, kernel flat index) triples of the Toeplitz expansion
        co, ci, w = self.kernel.shape
        P, L = self.positions, self.length
        o, c, k, p = np.meshgrid(np.arange(co), np.arange(ci), np.arange(w), np.arange(P), indexing="ij")
        rows = (o * P + p).ravel()
        cols = (c * L + p + k).ravel()
        flat = np.ravel_multi_index((o.ravel(), c.ravel(), k.ravel()), self.kernel.shape)
        return rows, cols, flat

    @cached_property
    def matrix(self) -> np.ndarray:
        rows, cols, flat = self._index
        m = np.zeros((self.out_dim, self.in_dim))
        m[rows, cols] = self.kernel.ravel()[flat]
        m.setflags(write=False)
        return m

    @cached_property
    def offset(self) -> np.ndarray:
        return np.repeat(self.bias, self.positions)

    def params(self):
        return [self.kernel, self.bias]

    def fold_grads(self, d_matrix, d_offset):
        rows, cols, flat = self._index
        dk = np.zeros(self.kernel.size)
        np.add.at(dk, flat, d_matrix[rows, cols])
        db = d_offset.reshape(self.kernel.shape[0], self.positions).sum(axis=1)
        return [dk.reshape(self.kernel.shape), db]


@dataclass(frozen=True)
class ReLU:
    def params(self):
        return []


LINEAR_LAYERS = (Dense, Conv1d)


@dataclass(frozen=True, eq=False)
class NeuralNet:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        linear = [l for l in layers if isinstance(l, LINEAR_LAYERS)]
        if not linear:
            raise ModelError("network needs at least one dense or conv1d layer")
        for l in layers:
            if not isinstance(l, LINEAR_LAYERS + (ReLU,)):
                raise ModelError(f"unsupported layer type {type(l).__name__}; only dense, conv1d and relu")
        for a, b in zip(linear, linear[1:]):
            if a.out_dim != b.in_dim:
                raise ModelError(f"layer output {a.out_dim} does not match next layer input {b.in_dim}")
        if linear[-1].out_dim != 1:
            raise ModelError("final layer must emit exactly one raw score")
        if not isinstance(layers[-1], LINEAR_LAYERS):
            raise ModelError("network must end with a linear layer (the raw-score unit)")

    @property
    def d(self) -> int:
        return next(l for l in self.layers if isinstance(l, LINEAR_LAYERS)).in_dim

    def forward(self, X: np.ndarray) -> list:
        """Activations entering each layer plus the final output."""
        acts = [np.asarray(X, dtype=float)]
        for layer in self.layers:
            a = acts[-1]
            if isinstance(layer, ReLU):
                acts.append(np.maximum(a, 0.0))
            else:
                acts.append(a @ layer.matrix.T + layer.offset)
        return acts

    def raw(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X)[-1][:, 0]

    def params(self) -> list:
        return [p for l in self.layers for p in l.params()]

    def with_params(self, flat: Sequence[np.ndarray]) -> "NeuralNet":
        """Copy of this network with parameter arrays replaced in ``params()`` order."""
        it = iter(flat)
        out = []
        for l in self.layers:
            if isinstance(l, Dense):
                out.append(Dense(next(it), next(it)))
            elif isinstance(l, Conv1d):
                out.append(Conv1d(next(it), next(it), l.length))
            else:
                out.append(l)
        return NeuralNet(tuple(out))


def loss_and_grads(net: NeuralNet, X: np.ndarray, y: np.ndarray) -> tuple[float, list]:
    """Mean cross-entropy of sigmoid(raw score) and its gradient for every parameter array."""
    acts = net.forward(X)
    s = acts[-1][:, 0]
    loss = float(np.mean(np.logaddexp(0.0, s) - y * s))
    delta = ((_sigmoid(s) - y) / X.shape[0])[:, None]
    grads = []
    for layer, a_in, a_out in zip(reversed(net.layers), reversed(acts[:-1]), reversed(acts[1:])):
        if isinstance(layer, ReLU):
            delta = delta * (a_in > 0)
            continue
        grads.append(layer.fold_grads(delta.T @ a_in, delta.sum(axis=0)))
        delta = delta @ layer.matrix
    flat = [g for layer_grads in reversed(grads) for g in layer_grads]
    return loss, flat


DEFAULT_ARCHITECTURE = (
    {"type": "dense", "units": 16},
    {"type": "relu"},
    {"type": "dense", "units": 8},
    {"type": "relu"},
    {"type": "dense", "units": 1},
)


def build_network(d: int, architecture: Sequence[dict], rng: np.random.Generator | None, init: str = "uniform") -> NeuralNet:
    """Instantiate ``architecture`` for ``d`` inputs.

    ``init="uniform"`` draws every weight and bias from U(-1/sqrt(fan_in),
    1/sqrt(fan_in)) in layer order; ``init="zeros"`` zero-fills everything.
    Layer specs: ``{"type": "dense", "units": k}``, ``{"type": "relu"}``,
    ``{"type": "conv1d", "channels": c, "width": w}``.
    """
    if init not in ("uniform", "zeros"):
        raise ModelError(f"unknown init scheme {init!r}")
    layers = []
    width = d
    channels, length = 1, d
    for spec in architecture:
        kind = spec.get("type")
        if kind == "relu":
            layers.append(ReLU())
            continue
        if kind == "dense":
            units = int(spec["units"])
            if units < 1:
                raise ModelError("dense units must be positive")
            fan_in = width
            shape_w, shape_b = (units, width), (units,)
        elif kind == "conv1d":
            c_out, k = int(spec.get("channels", 1)), int(spec.get("width", 3))
            if k > length or k < 1 or c_out < 1:
                raise ModelError(f"conv1d width {k} invalid for input length {length}")
            fan_in = channels * k
            shape_w, shape_b = (c_out, channels, k), (c_out,)
        else:
            raise ModelError(f"unsupported layer type {kind!r}; only dense, conv1d and relu")
        if init == "zeros":
            w, b = np.zeros(shape_w), np.zeros(shape_b)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=shape_w)
            b = rng.uniform(-bound, bound, size=shape_b)
        if kind == "dense":
            layers.append(Dense(w, b))
            width = units
            channels, length = 1, units
        else:
            layers.append(Conv1d(w, b, length))
            length = length - k + 1
            channels = c_out
            width = channels * length
    return NeuralNet(tuple(layers))


def train_nn(
    data: Dataset,
    architecture: Sequence[dict] = DEFAULT_ARCHITECTURE,
    cfg: TrainConfig | None = None,
    init: str = "uniform",
    callback: Callable[[int, float], None] | None = None,
) -> NeuralNet:
    """Fit the network by plain mini-batch SGD on mean cross-entropy.

    ``cfg.max_iterations`` is the number of epochs; rows are reshuffled every
    epoch from the PCG64 stream seeded with ``cfg.seed``, which also drives
    initialization. ``callback(epoch, full_train_loss)`` fires before training
    (epoch 0) and after each epoch.
    """
    cfg = cfg or TrainConfig(max_iterations=200, learning_rate=0.5, batch_size=64)
    if data.n < 1:
        raise ModelError("cannot train on an empty dataset")
    for spec in architecture:
        if spec.get("type") not in ("dense", "conv1d", "relu"):
            raise ModelError(f"unsupported layer type {spec.get('type')!r}; activations must be relu")
    rng = make_rng(cfg.seed)
    net = build_network(data.d, architecture, rng, init)
    X = data.rows
    y = data.labels.astype(float)
    params = [p.copy() for p in net.params()]

    def full_loss(net):
        s = net.raw(X)
        return float(np.mean(np.logaddexp(0.0, s) - y * s))

    if callback:
        callback(0, full_loss(net))
    for epoch in range(1, cfg.max_iterations + 1):
        order = rng.permutation(data.n)
        for start in range(0, data.n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(net, X[idx], y[idx])
            if not np.isfinite(loss):
                raise ModelError(f"non-finite loss in epoch {epoch}; lower the learning rate")
            for p, g in zip(params, grads):
                p -= cfg.learning_rate * g
            net = net.with_params(params)
        if callback:
            callback(epoch, full_loss(net))
    return net.with_params(params)


def _sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * s))
