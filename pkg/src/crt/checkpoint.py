"""Checkpoints: a JSON manifest plus one raw little-endian float32 blob."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(Exception):
    code = "checkpoint_error"


class CheckpointVersionError(CheckpointError):
    code = "version_mismatch"


class CheckpointShapeError(CheckpointError):
    code = "shape_mismatch"


class CheckpointTruncatedError(CheckpointError):
    code = "truncated_blob"


class CheckpointCorruptError(CheckpointError):
    code = "corrupt_manifest"


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def save_checkpoint(model, path, meta: dict | None = None) -> tuple[Path, Path]:
    """Write ``<path>.json`` and ``<path>.bin``; returns both paths."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path, blob_path = path.with_suffix(".json"), path.with_suffix(".bin")
    tensors, chunks, offset = [], [], 0
    for name, p in model.named_parameters():
        data = p.values.astype("<f4").tobytes()
        tensors.append(dict(name=name, shape=list(p.values.shape), offset=offset, nbytes=len(data)))
        chunks.append(data)
        offset += len(data)
    blob = b"".join(chunks)
    body = dict(format_version=FORMAT_VERSION, dtype="<f4", blob=blob_path.name,
                blob_sha256=hashlib.sha256(blob).hexdigest(), blob_nbytes=len(blob),
                model_config=model.cfg.to_dict(), tensors=tensors, meta=meta or {})
    manifest = dict(body, manifest_sha256=_digest(body))
    blob_path.write_bytes(blob)
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return manifest_path, blob_path


def read_manifest(path) -> dict:
    path = Path(path).with_suffix(".json")
    try:
        manifest = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointCorruptError(f"{path}: manifest is not valid JSON ({exc})") from None
    if not isinstance(manifest, dict):
        raise CheckpointCorruptError(f"{path}: manifest must be a JSON object")
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version!r}, expected {FORMAT_VERSION}")
    claimed = manifest.pop("manifest_sha256", None)
    if claimed != _digest(manifest):
        raise CheckpointCorruptError(f"{path}: manifest checksum mismatch")
    return manifest


def load_state(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Manifest and name -> float64 array mapping."""
    manifest = read_manifest(path)
    blob_path = Path(path).with_suffix(".bin")
    blob = blob_path.read_bytes()
    if len(blob) != manifest["blob_nbytes"]:
        raise CheckpointTruncatedError(f"{blob_path}: {len(blob)} bytes, manifest says {manifest['blob_nbytes']}")
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise CheckpointCorruptError(f"{blob_path}: blob checksum mismatch")
    state = {}
    for t in manifest["tensors"]:
        raw = np.frombuffer(blob, dtype="<f4", count=int(np.prod(t["shape"], dtype=np.int64)), offset=t["offset"])
        state[t["name"]] = raw.reshape(t["shape"]).astype(np.float64)
    return manifest, state


def load_into(model, path) -> dict:
    """Copy checkpoint tensors into ``model``; names and shapes must match exactly."""
    manifest, state = load_state(path)
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(state))
    extra = sorted(set(state) - set(params))
    if missing or extra:
        raise CheckpointShapeError(f"parameter names differ: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, p in params.items():
        if state[name].shape != p.values.shape:
            raise CheckpointShapeError(f"{name}: checkpoint shape {state[name].shape} != model {p.values.shape}")
    for name, p in params.items():
        p.values[...] = state[name]
    return manifest


def load_checkpoint(path):
    """Rebuild a model from the manifest's config snapshot and load its weights."""
    from .model import CRTModel, ModelConfig

    manifest = read_manifest(path)
    model = CRTModel(ModelConfig(**manifest["model_config"]))
    load_into(model, path)
    return model, manifest
