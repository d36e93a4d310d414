"""Three model families behind one contract: a raw log-odds score and a probability."""

from __future__ import annotations

import numpy as np

from xai_concord.dataset import sigmoid
from xai_concord.errors import ModelError
from xai_concord.models.config import TrainConfig
from xai_concord.models.gbt import RegressionTree, TreeEnsemble, train_gbt
from xai_concord.models.linear import LinearModel, logistic_loss, train_l1_logistic
from xai_concord.models.nn import Conv1d, Dense, NeuralNet, ReLU, train_nn

MODEL_TYPES = (LinearModel, TreeEnsemble, NeuralNet)


def model_dim(model) -> int:
    if not isinstance(model, MODEL_TYPES):
        raise ModelError(f"not a model: {type(model).__name__}")
    return model.d


def raw_score(model, x):
    """Pre-sigmoid score. A 1-D ``x`` gives a float, a 2-D batch gives an array."""
    x = np.asarray(x, dtype=float)
    d = model_dim(model)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != d:
        raise ModelError(f"input has {X.shape[-1]} features, model expects {d}")
    s = model.raw(X)
    return float(s[0]) if single else s


def predict_proba(model, x):
    """``sigmoid(raw_score(model, x))`` evaluated without overflow."""
    return sigmoid(raw_score(model, x))


def training_logloss(model, X, y) -> float:
    return logistic_loss(raw_score(model, np.asarray(X, dtype=float)), np.asarray(y, dtype=float))


__all__ = [
    "Conv1d",
    "Dense",
    "LinearModel",
    "NeuralNet",
    "ReLU",
    "RegressionTree",
    "TrainConfig",
    "TreeEnsemble",
    "model_dim",
    "predict_proba",
    "raw_score",
    "train_gbt",
    "train_l1_logistic",
    "train_nn",
    "training_logloss",
]
