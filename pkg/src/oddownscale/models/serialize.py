"""Versioned JSON documents for trained models.

Floats are written with ``repr`` precision by the json module, so a
dump/load cycle reproduces every parameter bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .base import Model, ModelError
from .fnn import FnnConfig, FnnModel
from .forest import DecisionTree, ForestConfig, ForestModel
from .linear import LinearConfig, LinearModel
from .svr import SvrConfig, SvrModel

FORMAT = "oddownscale-model"
VERSION = 1

CONFIG_TYPES = {
    "linear": LinearConfig,
    "forest": ForestConfig,
    "svr": SvrConfig,
    "fnn": FnnConfig,
}


def _params(model: Model) -> dict:
    if isinstance(model, LinearModel):
        return {"coef": model.coef.tolist(), "intercept": model.intercept}
    if isinstance(model, ForestModel):
        return {
            "n_features": model.n_features,
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": t.value.tolist(),
                }
                for t in model.trees
            ],
        }
    if isinstance(model, SvrModel):
        return {
            "n_features": model.n_features,
            "gamma": model.gamma,
            "intercept": model.intercept,
            "coef": model.coef.tolist(),
            "support": model.support.tolist(),
            "support_index": None if model.support_index is None else model.support_index.tolist(),
        }
    if isinstance(model, FnnModel):
        return {"layers": [{"weight": w.tolist(), "bias": b.tolist()} for w, b in model.layers]}
    raise ModelError(f"cannot serialise {type(model).__name__}")


def _checksum(body: dict) -> str:
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def model_to_dict(model: Model) -> dict:
    config = asdict(model.config) if model.config is not None else {}
    body = {"kind": model.kind, "config": config, "params": _params(model)}
    return {"format": FORMAT, "version": VERSION, **body, "checksum": _checksum(body)}


def model_from_dict(doc: dict) -> Model:
    if doc.get("format") != FORMAT:
        raise ModelError("not a model document")
    if doc.get("version") != VERSION:
        raise ModelError(f"unsupported model document version {doc.get('version')}")
    body = {k: doc[k] for k in ("kind", "config", "params")}
    if _checksum(body) != doc.get("checksum"):
        raise ModelError("model checksum mismatch")
    kind, p = doc["kind"], doc["params"]
    config = CONFIG_TYPES[kind](**doc["config"])
    if kind == "linear":
        return LinearModel(p["coef"], p["intercept"], config)
    if kind == "forest":
        trees = [DecisionTree(t["feature"], t["threshold"], t["left"], t["right"], t["value"]) for t in p["trees"]]
        return ForestModel(trees, config, p["n_features"])
    if kind == "svr":
        support = np.asarray(p["support"], dtype=np.float64).reshape(-1, p["n_features"])
        return SvrModel(support, p["coef"], p["intercept"], p["gamma"], config,
                        support_index=p["support_index"], n_features=p["n_features"])
    if kind == "fnn":
        return FnnModel([(layer["weight"], layer["bias"]) for layer in p["layers"]], config)
    raise ModelError(f"unknown model kind {kind!r}")


def save_model(model: Model, path: str | Path) -> None:
    path = Path(path)
    text = json.dumps(model_to_dict(model))
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def load_model(path: str | Path) -> Model:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
