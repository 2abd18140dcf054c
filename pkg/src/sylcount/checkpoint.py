"""Model checkpoints: a tensor archive plus a JSON sidecar.

Parameters go into a compressed numpy archive keyed by parameter name; the
sidecar carries the model kind, its config, and the feature config in
force at training time (including the normalization choice), so a loaded
model can never silently run on differently prepared features. Loading
validates every tensor shape against the freshly built model.
"""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path

import numpy as np
import torch

from .baseline_nets import BlstmCount, BlstmCountConfig
from .errors import DataError
from .features import FeatureConfig
from .sylnet import SylNet, SylNetConfig

SIDECAR_SUFFIX = ".json"


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + SIDECAR_SUFFIX)


def model_kind(model) -> str:
    if isinstance(model, SylNet):
        return "sylnet"
    if isinstance(model, BlstmCount):
        return "blstm_count"
    raise TypeError(f"unsupported model type {type(model).__name__}")


def save_checkpoint(model, feature_config: FeatureConfig, path: str | os.PathLike) -> None:
    path = Path(path)
    arrays = {name: tensor.detach().numpy() for name, tensor in model.state_dict().items()}
    sidecar = {
        "model_kind": model_kind(model),
        "model_config": dataclasses.asdict(model.config),
        "feature_config": dataclasses.asdict(feature_config),
        "dtype": str(model.dtype).removeprefix("torch."),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    with open(_sidecar_path(path), "w") as f:
        json.dump(sidecar, f, sort_keys=True, indent=2)
        f.write("\n")


def _build_model(sidecar: dict) -> tuple[object, FeatureConfig]:
    try:
        kind = sidecar["model_kind"]
        dtype = getattr(torch, sidecar["dtype"])
        model_config = sidecar["model_config"]
        feature_config = FeatureConfig(**sidecar["feature_config"])
        if kind == "sylnet":
            dilations = model_config.get("dilations")
            if dilations is not None:
                model_config = dict(model_config, dilations=tuple(dilations))
            model = SylNet(SylNetConfig(**model_config), seed=0, dtype=dtype)
        elif kind == "blstm_count":
            model = BlstmCount(BlstmCountConfig(**model_config), seed=0, dtype=dtype)
        else:
            raise DataError(f"unknown model kind {kind!r}")
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise DataError(f"malformed checkpoint sidecar: {exc}") from exc
    return model, feature_config


def load_checkpoint(path: str | os.PathLike) -> tuple[object, FeatureConfig]:
    """Rebuild the model named by the sidecar and load its tensors,
    enforcing an exact shape match parameter by parameter."""
    path = Path(path)
    sidecar_path = _sidecar_path(path)
    try:
        with open(sidecar_path) as f:
            sidecar = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint sidecar {sidecar_path}: {exc}") from exc
    model, feature_config = _build_model(sidecar)
    try:
        with np.load(path) as archive:
            arrays = {name: archive[name] for name in archive.files}
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint archive {path}: {exc}") from exc
    state = model.state_dict()
    missing = sorted(set(state) - set(arrays))
    unexpected = sorted(set(arrays) - set(state))
    if missing or unexpected:
        raise DataError(
            f"checkpoint {path} does not match the model: "
            f"missing {missing[:3]}, unexpected {unexpected[:3]}"
        )
    for name, tensor in state.items():
        if tuple(arrays[name].shape) != tuple(tensor.shape):
            raise DataError(
                f"checkpoint tensor {name} has shape {arrays[name].shape}, "
                f"model expects {tuple(tensor.shape)}"
            )
    model.load_state_dict({name: torch.from_numpy(arrays[name].copy()) for name in state})
    return model, feature_config


__all__ = ["save_checkpoint", "load_checkpoint", "model_kind", "SIDECAR_SUFFIX"]
