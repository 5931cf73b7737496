"""Parameter checkpoints: JSON map of name -> shape + row-major values."""

from __future__ import annotations

import json
import os
import tempfile
from typing import Mapping, Optional

import numpy as np

FORMAT_VERSION = "whnn-params/1"


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def params_to_dict(params: Mapping[str, np.ndarray], config: Optional[dict] = None) -> dict:
    doc = {
        "version": FORMAT_VERSION,
        "params": {
            name: {"shape": list(np.shape(v)), "values": np.asarray(v, dtype=np.float64).ravel().tolist()}
            for name, v in params.items()
        },
    }
    if config is not None:
        doc["config"] = config
    return doc


def save_checkpoint(path: str, params: Mapping[str, np.ndarray], config: Optional[dict] = None) -> None:
    atomic_write_text(path, json.dumps(params_to_dict(params, config), allow_nan=False))


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], Optional[dict]]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    params = {}
    for name, rec in doc["params"].items():
        arr = np.asarray(rec["values"], dtype=np.float64)
        params[name] = arr.reshape(rec["shape"])
    return params, doc.get("config")
