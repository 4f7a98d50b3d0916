"""Text checkpoint format: a single JSON document holding config and tensors.

Floats round-trip exactly through Python's shortest-repr JSON encoding, so a
saved/loaded state is bit-identical to the live one. Readers reject unknown
versions and refuse truncated or malformed files without partial effects.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, ModelParams

CHECKPOINT_VERSION = 1


def tensors_to_obj(params: ModelParams) -> dict:
    return {
        name: {"shape": list(block.shape), "data": block.ravel().tolist()}
        for name, block in params.items()
    }


def tensors_from_obj(obj: dict) -> ModelParams:
    params: ModelParams = {}
    for name, entry in obj.items():
        try:
            shape = tuple(int(d) for d in entry["shape"])
            data = np.asarray(entry["data"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"malformed tensor entry {name!r}: {exc}") from exc
        expected = int(np.prod(shape)) if shape else 1
        if data.size != expected:
            raise CheckpointError(f"tensor {name!r}: data length does not match shape {shape}")
        params[name] = data.reshape(shape)
    return params


def model_config_to_obj(config: ModelConfig) -> dict:
    obj = dataclasses.asdict(config)
    obj["hidden"] = list(config.hidden)
    return obj


def model_config_from_obj(obj: dict) -> ModelConfig:
    try:
        obj = dict(obj)
        obj["hidden"] = tuple(obj.get("hidden", ()))
        return ModelConfig(**obj)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed model config: {exc}") from exc


def write_json(path: str, document: dict) -> None:
    """Write atomically so failed runs never leave a readable partial file."""
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(document, fh)
        fh.write("\n")
    os.replace(tmp, path)


def read_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            document = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot load {path}: {exc}") from exc
    if not isinstance(document, dict):
        raise CheckpointError(f"cannot load {path}: top level is not an object")
    version = document.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"cannot load {path}: unsupported version {version!r} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    return document


def save_params(path: str, config: ModelConfig, params: ModelParams) -> None:
    write_json(path, {
        "version": CHECKPOINT_VERSION,
        "config": model_config_to_obj(config),
        "tensors": tensors_to_obj(params),
    })


def load_params(path: str) -> tuple[ModelConfig, ModelParams]:
    document = read_json(path)
    for key in ("config", "tensors"):
        if key not in document:
            raise CheckpointError(f"cannot load {path}: missing section {key!r}")
    return model_config_from_obj(document["config"]), tensors_from_obj(document["tensors"])
