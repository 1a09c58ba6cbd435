"""JSON checkpoint container for IDRP models, PCA fits and memory banks.

Floats are written with Python's shortest round-trip repr, so a load
reproduces every array bit-for-bit.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import RunConfig, config_from_dict
from .diffcore import RngStream
from .flow import PermuteLayer
from .idrp import IdrpModel, ModelConfig
from .membank import MemoryBank
from .pca import PcaModel

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _arr(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": np.asarray(a, dtype=np.float64).ravel().tolist()}


def _unarr(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def _header(kind: str, config: RunConfig | None, seed: int) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config.to_dict() if config is not None else None,
        "rng": {"algorithm": RngStream.algorithm, "seed": int(seed)},
    }


def idrp_to_doc(model: IdrpModel, config: RunConfig | None = None, original_d: int | None = None) -> dict:
    doc = _header("idrp", config, model.seed)
    doc["model"] = {**model.cfg.__dict__, "original_d": original_d or model.d}
    doc["params"] = {k: _arr(v) for k, v in sorted(model.params().items())}
    doc["permutations"] = [p.perm.tolist() for p in model.encoder.perms]
    return doc


def pca_to_doc(model: PcaModel, config: RunConfig | None = None, original_d: int | None = None, seed: int = 0) -> dict:
    doc = _header("pca", config, seed)
    doc["model"] = {"d": model.d, "m": model.m, "original_d": original_d or model.d}
    doc["params"] = {
        "mean": _arr(model.mean),
        "components": _arr(model.components),
        "explained_variance": _arr(model.explained_variance),
    }
    return doc


def bank_to_doc(bank: MemoryBank, config: RunConfig | None = None, seed: int = 0) -> dict:
    doc = _header("bank", config, seed)
    doc["bank"] = bank.to_dict()
    return doc


def save(doc: dict, path) -> None:
    Path(path).write_text(dumps(doc))


def load(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    if doc.get("kind") not in ("idrp", "pca", "bank"):
        raise CheckpointError(f"{path}: unknown kind {doc.get('kind')!r}")
    return doc


def doc_config(doc: dict) -> RunConfig | None:
    return config_from_dict(doc["config"]) if doc.get("config") is not None else None


def idrp_from_doc(doc: dict) -> IdrpModel:
    if doc["kind"] != "idrp":
        raise CheckpointError(f"expected an idrp checkpoint, got {doc['kind']!r}")
    info = dict(doc["model"])
    info.pop("original_d", None)
    d = info.pop("d")
    model = IdrpModel(d, ModelConfig(**info), seed=doc["rng"]["seed"])
    params = model.params()
    stored = doc["params"]
    if set(stored) != set(params):
        raise CheckpointError("checkpoint parameter names do not match the model layout")
    for name, arr in params.items():
        value = _unarr(stored[name])
        if value.shape != arr.shape:
            raise CheckpointError(f"shape mismatch for {name}: {value.shape} vs {arr.shape}")
        arr[...] = value
    if len(doc["permutations"]) != model.encoder.n_layers:
        raise CheckpointError("permutation count does not match layer count")
    model.encoder.perms = [PermuteLayer(p) for p in doc["permutations"]]
    return model


def pca_from_doc(doc: dict) -> PcaModel:
    if doc["kind"] != "pca":
        raise CheckpointError(f"expected a pca checkpoint, got {doc['kind']!r}")
    p = doc["params"]
    return PcaModel(_unarr(p["mean"]), _unarr(p["components"]), _unarr(p["explained_variance"]))


def bank_from_doc(doc: dict) -> MemoryBank:
    if doc["kind"] != "bank":
        raise CheckpointError(f"expected a bank checkpoint, got {doc['kind']!r}")
    return MemoryBank.from_dict(doc["bank"])
