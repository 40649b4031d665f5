"""Model artifacts: a numpy ``.npz`` archive of named arrays plus a ``meta``
entry holding a JSON document.

``meta`` always carries ``format`` ("diadetect-model"), ``format_version``,
``version`` (package version), ``arch``, ``lookback``, ``seed`` and
``scaling``; ETR artifacts add ``etr`` hyperparameters and ``n_features``,
recurrent ones add ``train_config`` and the loss curve. Arrays are the
concatenated tree node arrays (ETR) or the ``named_arrays()`` of the
parameter set (LSTM/BiLSTM).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import __version__
from ..data import MinMaxScaling
from . import recurrent
from .etr import EtrModel, EtrParams
from .forecasters import ModelForecaster

FORMAT = "diadetect-model"
FORMAT_VERSION = 1

_ETR_ARRAYS = ("feature", "threshold", "left", "right", "value", "n_samples", "offsets")


def write_archive(path, arrays: dict, meta: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def read_archive(path, expected_format: str) -> tuple[dict, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such artifact: {path}")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        arrays = {k: z[k] for k in z.files if k != "meta"}
    if meta.get("format") != expected_format:
        raise ValueError(f"{path} is not a {expected_format} artifact")
    if meta.get("format_version", 0) > FORMAT_VERSION:
        raise ValueError(f"{path} uses a newer format version")
    return meta, arrays


def save_forecaster(path, fc: ModelForecaster, extra: dict | None = None):
    meta = {"format": FORMAT, "format_version": FORMAT_VERSION, "version": __version__,
            "arch": fc.arch, "lookback": fc.lookback, "scaling": fc.scaling.to_dict()}
    meta.update({k: v for k, v in fc.meta.items() if k not in meta})
    meta.update(extra or {})
    if fc.arch == "etr":
        m = fc.model
        arrays = {k: getattr(m, k) for k in _ETR_ARRAYS}
        meta["n_features"] = m.n_features
        meta["etr"] = {"n_trees": m.params.n_trees, "max_features": m.params.max_features,
                       "n_min": m.params.n_min}
        meta["seed"] = m.seed
    else:
        arrays = dict(fc.model.named_arrays())
        meta["dropout"] = fc.model.dropout
    write_archive(path, arrays, meta)


def load_forecaster(path) -> ModelForecaster:
    meta, arrays = read_archive(path, FORMAT)
    arch = meta["arch"]
    if arch == "etr":
        model = EtrModel(**{k: arrays[k] for k in _ETR_ARRAYS}, n_features=meta["n_features"],
                         params=EtrParams(**meta["etr"]), seed=meta["seed"])
    else:
        model = recurrent.params_from_arrays(arch, arrays, meta.get("dropout", 0.0))
    scaling = MinMaxScaling.from_dict(meta["scaling"])
    return ModelForecaster(arch, model, scaling, meta["lookback"], meta)
