"""Versioned JSON documents for trained models.

Floats are written with Python's shortest round-trip repr, so loading a
saved model reproduces every parameter bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from xai_concord.dataset import StandardizationParams
from xai_concord.errors import ModelError
from xai_concord.models.gbt import RegressionTree, TreeEnsemble
from xai_concord.models.linear import LinearModel
from xai_concord.models.nn import Conv1d, Dense, NeuralNet, ReLU

SCHEMA = "xai-concord/model"
VERSION = 1


def _arr(a) -> dict:
    a = np.asarray(a)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _unarr(doc, dtype=float) -> np.ndarray:
    return np.array(doc["data"], dtype=dtype).reshape(doc["shape"])


def model_to_dict(model) -> dict:
    head = {"schema": SCHEMA, "version": VERSION}
    if isinstance(model, LinearModel):
        return {
            **head,
            "type": "linear",
            "d": model.d,
            "weights": _arr(model.weights),
            "intercept": model.intercept,
            "lambda": model.lam,
            "standardization": model.standardization.to_dict() if model.standardization else None,
        }
    if isinstance(model, TreeEnsemble):
        return {
            **head,
            "type": "tree_ensemble",
            "d": model.d,
            "learning_rate": model.learning_rate,
            "base_score": model.base_score,
            "reg_lambda": model.reg_lambda,
            "trees": [
                {k: _arr(getattr(t, k)) for k in ("feature", "threshold", "left", "right", "value")}
                for t in model.trees
            ],
        }
    if isinstance(model, NeuralNet):
        layers = []
        for l in model.layers:
            if isinstance(l, Dense):
                layers.append({"type": "dense", "weight": _arr(l.weight), "bias": _arr(l.bias)})
            elif isinstance(l, Conv1d):
                layers.append({"type": "conv1d", "kernel": _arr(l.kernel), "bias": _arr(l.bias), "length": l.length})
            else:
                layers.append({"type": "relu"})
        return {**head, "type": "neural_net", "d": model.d, "layers": layers}
    raise ModelError(f"cannot serialize {type(model).__name__}")


def model_from_dict(doc: dict):
    if doc.get("schema") != SCHEMA:
        raise ModelError(f"not a model document (schema={doc.get('schema')!r})")
    if doc.get("version") != VERSION:
        raise ModelError(f"unsupported model document version {doc.get('version')!r}")
    kind = doc.get("type")
    if kind == "linear":
        std = doc.get("standardization")
        return LinearModel(
            _unarr(doc["weights"]), doc["intercept"], doc["lambda"],
            StandardizationParams.from_dict(std) if std else None,
        )
    if kind == "tree_ensemble":
        trees = tuple(
            RegressionTree(
                _unarr(t["feature"], np.int64), _unarr(t["threshold"]), _unarr(t["left"], np.int64),
                _unarr(t["right"], np.int64), _unarr(t["value"]),
            )
            for t in doc["trees"]
        )
        return TreeEnsemble(trees, doc["learning_rate"], doc["base_score"], doc["reg_lambda"], doc["d"])
    if kind == "neural_net":
        layers = []
        for l in doc["layers"]:
            if l["type"] == "dense":
                layers.append(Dense(_unarr(l["weight"]), _unarr(l["bias"])))
            elif l["type"] == "conv1d":
                layers.append(Conv1d(_unarr(l["kernel"]), _unarr(l["bias"]), l["length"]))
            elif l["type"] == "relu":
                layers.append(ReLU())
            else:
                raise ModelError(f"unknown layer type {l['type']!r}")
        return NeuralNet(tuple(layers))
    raise ModelError(f"unknown model type {kind!r}")


def save_model(model, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")
    return path


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
