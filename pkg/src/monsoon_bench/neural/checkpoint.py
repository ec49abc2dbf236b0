"""JSON checkpoint container.

Layout (``format_version`` 1)::

    {
      "format": "monsoon-bench-checkpoint",
      "format_version": 1,
      "seed": 3,
      "layers": [
        {"kind": "lstm", "in_dim": 400, "out_dim": 32, "activation": "tanh", "groups": 1,
         "params": {"W": {"shape": [400, 128], "data": [...]}, "U": {...}, "b": {...}}},
        ...
      ],
      "history": {"train_loss": [...], "val_loss": [...], "best_epoch": 12, "stopped_early": true},
      "meta": {...free-form, e.g. pipeline, cap, context_days...}
    }

``data`` is the row-major flattening of the array. Floats are written with
``repr`` precision so a load reproduces the weights bit for bit.
"""

from __future__ import annotations

import json

import numpy as np

from ..atomic import atomic_write_text
from ..errors import DataError
from .layers import LayerSpec, ModelParams, check_chain
from .training import History

FORMAT = "monsoon-bench-checkpoint"
FORMAT_VERSION = 1


def checkpoint_dict(params: ModelParams, history: History | None = None, meta: dict | None = None) -> dict:
    layers = []
    for s, w in zip(params.specs, params.weights):
        entry = s.as_dict()
        entry["params"] = {k: {"shape": list(a.shape), "data": a.ravel().tolist()}
                           for k, a in sorted(w.items())}
        layers.append(entry)
    return {"format": FORMAT, "format_version": FORMAT_VERSION, "seed": int(params.seed),
            "layers": layers, "history": history.as_dict() if history else None,
            "meta": meta or {}}


def params_from_dict(d: dict) -> tuple[ModelParams, History | None, dict]:
    if d.get("format") != FORMAT:
        raise DataError("not a monsoon-bench checkpoint")
    if d.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {d.get('format_version')}")
    specs, weights = [], []
    for entry in d["layers"]:
        specs.append(LayerSpec(entry["kind"], entry["in_dim"], entry["out_dim"],
                               entry["activation"], entry.get("groups", 1)))
        weights.append({k: np.asarray(v["data"], dtype=float).reshape(v["shape"])
                        for k, v in entry["params"].items()})
    params = ModelParams(check_chain(specs), tuple(weights), d["seed"])
    hist = History.from_dict(d["history"]) if d.get("history") else None
    return params, hist, d.get("meta", {})


def save_checkpoint(path, params: ModelParams, history: History | None = None, meta: dict | None = None) -> None:
    atomic_write_text(path, json.dumps(checkpoint_dict(params, history, meta)))


def load_checkpoint(path) -> tuple[ModelParams, History | None, dict]:
    with open(path) as fh:
        return params_from_dict(json.load(fh))
