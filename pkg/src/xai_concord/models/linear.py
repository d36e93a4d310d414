"""L1-penalized logistic regression fitted by proximal gradient descent."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from xai_concord.dataset import Dataset, StandardizationParams
from xai_concord.errors import ModelError
from xai_concord.models.config import TrainConfig

_MIN_STEP = 1e-20


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    intercept: float
    lam: float = 0.0
    standardization: Optional[StandardizationParams] = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(self, "lam", float(self.lam))
        if self.lam < 0:
            raise ModelError("lambda must be nonnegative")

    @property
    def d(self) -> int:
        return self.weights.size

    def raw(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights + self.intercept


def logistic_loss(scores: np.ndarray, y: np.ndarray) -> float:
    """Mean log-loss of raw scores against 0/1 labels."""
    return float(np.mean(np.logaddexp(0.0, scores) - y * scores))


def l1_objective(model: LinearModel, X: np.ndarray, y: np.ndarray) -> float:
    return logistic_loss(model.raw(X), y) + model.lam * float(np.abs(model.weights).sum())


def deactivation_threshold(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest lambda for which the all-zero weight vector is optimal.

    At the intercept-only optimum sigmoid(b) equals the label mean, so the
    smooth gradient in w is ``-(1/n) X^T (y - ybar)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.max(np.abs(X.T @ (y - y.mean())) / X.shape[0])) if X.shape[1] else 0.0


def _soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def train_l1_logistic(
    data: Dataset,
    lam: float,
    cfg: TrainConfig | None = None,
    standardization: StandardizationParams | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> LinearModel:
    """Minimize ``mean logloss + lam * ||w||_1`` with an unpenalized intercept.

    Each iteration takes a gradient step on the smooth part followed by
    soft-thresholding of ``w``. The step size starts at ``cfg.learning_rate``,
    is allowed to double between iterations, and is halved until the usual
    sufficient-decrease bound holds, so the objective never increases.
    Stops once no parameter moves by more than ``cfg.tolerance``.

    ``callback(iteration, objective)`` is called with the starting objective
    (iteration 0) and after every accepted step.
    """
    cfg = cfg or TrainConfig(max_iterations=5000, tolerance=1e-9, learning_rate=1.0)
    if data.n < 1:
        raise ModelError("cannot train on an empty dataset")
    if lam < 0:
        raise ModelError("lambda must be nonnegative")
    X = data.rows
    y = data.labels.astype(float)
    n, d = X.shape

    ybar = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    b = float(np.clip(np.log(ybar / (1 - ybar)), -10.0, 10.0))
    w = np.zeros(d)

    def smooth(w, b):
        s = X @ w + b
        f = float(np.mean(np.logaddexp(0.0, s) - y * s))
        return f, s

    f, s = smooth(w, b)
    if not np.isfinite(f):
        raise ModelError("non-finite loss at initialization")
    obj = f + lam * np.abs(w).sum()
    if callback:
        callback(0, obj)

    step = cfg.learning_rate
    for it in range(1, cfg.max_iterations + 1):
        r = _sigmoid(s) - y
        gw = X.T @ r / n
        gb = float(r.mean())
        step = step * 2.0
        while True:
            w_new = _soft_threshold(w - step * gw, step * lam)
            b_new = b - step * gb
            f_new, s_new = smooth(w_new, b_new)
            if not np.isfinite(f_new):
                raise ModelError(f"non-finite loss at iteration {it} (step size {step:g} too large)")
            dw = w_new - w
            db = b_new - b
            bound = f + gw @ dw + gb * db + (dw @ dw + db * db) / (2.0 * step)
            if f_new <= bound or step < _MIN_STEP:
                break
            step *= 0.5
        new_obj = f_new + lam * np.abs(w_new).sum()
        if new_obj > obj:
            # Rounding at convergence; keep the better iterate.
            break
        change = max(float(np.max(np.abs(dw), initial=0.0)), abs(db))
        w, b, f, s, obj = w_new, b_new, f_new, s_new, new_obj
        if callback:
            callback(it, obj)
        if change < cfg.tolerance or step < _MIN_STEP:
            break

    return LinearModel(w, b, lam, standardization)


def _sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * s))
