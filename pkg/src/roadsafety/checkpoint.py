"""JSON checkpoints: shapes, flattened parameters, optimizer state, scaler, splits."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import Scaler
from .gnn import GnnModel
from .nn.models import FeedForward, LogisticRegression, LstmClassifier, Model
from .nn.optim import AdamState

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    model: Model
    scaler: Scaler
    seed: int
    config_hash: str
    best_epoch: int
    splits: dict[str, list[str]]
    optimizer: AdamState | None = None


def build_model(kind: str, model_config: dict) -> Model:
    cfg = dict(model_config)
    if kind == "logistic":
        return LogisticRegression(cfg["n_in"], cfg["n_classes"], binary=cfg.get("binary", False))
    if kind == "ffnn":
        return FeedForward(cfg["n_in"], tuple(cfg["hidden"]), cfg["n_classes"])
    if kind == "lstm":
        return LstmClassifier(cfg["n_in"], cfg["hidden"], cfg["n_classes"])
    if kind == "gnn":
        return GnnModel(cfg["n_in"], cfg["hidden"], cfg["n_classes"], cfg["depth"])
    raise CheckpointError(f"unknown model kind {kind!r}")


def _pack(arrays: dict[str, np.ndarray]) -> dict:
    return {k: {"shape": list(v.shape), "values": v.ravel().tolist()} for k, v in sorted(arrays.items())}


def _unpack(packed: dict) -> dict[str, np.ndarray]:
    return {k: np.array(v["values"], dtype=np.float64).reshape(v["shape"]) for k, v in packed.items()}


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": ckpt.kind,
        "model_config": ckpt.model.config(),
        "params": _pack(ckpt.model.params),
        "optimizer": ckpt.optimizer.to_dict() if ckpt.optimizer is not None else None,
        "scaler": ckpt.scaler.to_dict(),
        "seed": ckpt.seed,
        "config_hash": ckpt.config_hash,
        "best_epoch": ckpt.best_epoch,
        "splits": ckpt.splits,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    model = build_model(doc["kind"], doc["model_config"])
    params = _unpack(doc["params"])
    if set(params) != set(model.params):
        raise CheckpointError("checkpoint parameters do not match the model layout")
    for name, value in params.items():
        if value.shape != model.params[name].shape:
            raise CheckpointError(f"shape mismatch for {name}: {value.shape} vs {model.params[name].shape}")
    model.load_params(params)
    shapes = {k: v.shape for k, v in params.items()}
    opt = AdamState.from_dict(doc["optimizer"], shapes) if doc.get("optimizer") else None
    return Checkpoint(
        kind=doc["kind"],
        model=model,
        scaler=Scaler.from_dict(doc["scaler"]),
        seed=doc["seed"],
        config_hash=doc["config_hash"],
        best_epoch=doc["best_epoch"],
        splits=doc["splits"],
        optimizer=opt,
    )
