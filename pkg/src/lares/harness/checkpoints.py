"""Checkpoint persistence: an npz parameter blob plus a JSON metadata
sidecar. Saves are atomic and round-trips are bit-exact."""

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from ..ioutil import atomic_write_json
from ..model import ArchitectureConfig, ModelParameters
from .. import tensor as T

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    params: ModelParameters
    meta: dict


def sidecar_path(path):
    return os.fspath(path) + ".json"


def save_checkpoint(path, params, stage, epoch=0, valid_metrics=None, config_hash=None, reference=None):
    """Write the parameter blob and sidecar; both land atomically."""
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    state = params.state_dict()
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", prefix=".tmp-", suffix=".npz")
    try:
        with os.fdopen(fd, "wb") as f:
            np.savez(f, **{name.replace(".", "__"): arr for name, arr in state.items()})
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    meta = {
        "format_version": FORMAT_VERSION,
        "stage": stage,
        "epoch": epoch,
        "valid_metrics": valid_metrics or {},
        "config_hash": config_hash,
        "reference": reference,
        "arch": params.config.to_dict(),
        "num_items": params.num_items,
        "max_len": params.max_len,
    }
    atomic_write_json(sidecar_path(path), meta)
    return path


def load_checkpoint(path, expected_arch=None):
    """Load a checkpoint; fails loudly on version, shape, or config
    mismatches and never returns partial state."""
    path = os.fspath(path)
    try:
        with open(sidecar_path(path), "r", encoding="utf-8") as f:
            meta = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint metadata {sidecar_path(path)}: {e}") from e
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} != supported {FORMAT_VERSION}")
    try:
        arch = ArchitectureConfig(**meta["arch"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"invalid architecture metadata: {e}") from e
    if expected_arch is not None and arch != expected_arch:
        raise CheckpointError(
            f"checkpoint architecture {arch.to_dict()} does not match expected {expected_arch.to_dict()}"
        )
    try:
        with np.load(path) as blob:
            state = {name.replace("__", "."): blob[name] for name in blob.files}
    except Exception as e:
        raise CheckpointError(f"corrupt checkpoint blob {path}: {e}") from e
    params = ModelParameters(arch, meta["num_items"], meta["max_len"], {})
    params.tensors = {}
    fresh = ModelParameters.initialize(arch, meta["num_items"], meta["max_len"], seed=0)
    try:
        fresh.load_state_dict(state)
    except ValueError as e:
        raise CheckpointError(f"checkpoint blob does not fit its declared shape: {e}") from e
    params.tensors = {name: T.parameter(arr) for name, arr in state.items()}
    return Checkpoint(params=params, meta=meta)
