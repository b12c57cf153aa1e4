"""Versioned model and collection persistence with integrity checking.

A checkpoint is a single JSON document: format tag, version, the
architecture description, one base64 blob holding every parameter tensor
back to back as little-endian float64, the training metadata, and a
sha256 checksum over the canonical serialization of everything else.
float64 bytes pass through base64 untouched, so load(save(m)) returns
bit-identical parameters. A collection is a directory of model
checkpoints plus a manifest carrying the entry table (sigma, ACA,
unsmoothable flag) and quantity options, checksummed the same way.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import tempfile
from typing import Mapping

import numpy as np

from . import kernel, nets
from .ensemble import CollectionEntry, ModelCollection

MODEL_FORMAT = "semlab-model"
COLLECTION_FORMAT = "semlab-collection"
FORMAT_VERSION = 1

_BLOB_DTYPE = "<f8"  # little-endian float64, fixed across platforms


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Unknown format tag or unsupported version number."""


class CheckpointChecksumError(CheckpointError):
    """Stored checksum does not match the file contents."""


class CheckpointTruncatedError(CheckpointError):
    """File is incomplete or structurally not a checkpoint."""


def atomic_write_text(path: str, text: str) -> None:
    """Write text to path via a same-directory temp file and rename, so
    readers never observe a half-written file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _canonical(body: dict) -> str:
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


def _checksum(body: dict) -> str:
    return hashlib.sha256(_canonical(body).encode("utf-8")).hexdigest()


def _seal(body: dict) -> str:
    body = dict(body)
    body["checksum"] = _checksum(body)
    return _canonical(body)


def _jsonable_meta(meta: Mapping) -> dict:
    def conv(v):
        if isinstance(v, np.integer):
            return int(v)
        if isinstance(v, np.floating):
            return float(v)
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        if isinstance(v, dict):
            return {str(k): conv(x) for k, x in v.items()}
        return v

    return {str(k): conv(v) for k, v in meta.items()}


def _layer_to_dict(layer: kernel.LayerDescriptor) -> dict:
    d = {"kind": layer.kind}
    for name in ("in_dim", "out_dim", "in_channels", "out_channels",
                 "kernel_size", "pool"):
        value = getattr(layer, name)
        if value:
            d[name] = int(value)
    return d


def _layer_from_dict(d: dict) -> kernel.LayerDescriptor:
    return kernel.LayerDescriptor(
        d["kind"],
        in_dim=int(d.get("in_dim", 0)),
        out_dim=int(d.get("out_dim", 0)),
        in_channels=int(d.get("in_channels", 0)),
        out_channels=int(d.get("out_channels", 0)),
        kernel_size=int(d.get("kernel_size", 0)),
        pool=int(d.get("pool", 0)),
    )


def _arch_to_dict(arch: nets.ArchitectureSpec) -> dict:
    return {
        "arch_id": arch.arch_id,
        "layers": [_layer_to_dict(l) for l in arch.layers],
        "input_shape": [int(s) for s in arch.input_shape],
        "class_count": int(arch.class_count),
    }


def _arch_from_dict(d: dict) -> nets.ArchitectureSpec:
    return nets.ArchitectureSpec(
        d["arch_id"],
        tuple(_layer_from_dict(l) for l in d["layers"]),
        tuple(int(s) for s in d["input_shape"]),
        int(d["class_count"]),
    )


def model_to_dict(model: nets.Model) -> dict:
    """The unsealed checkpoint body for a model (no checksum field)."""
    blob = b"".join(
        np.ascontiguousarray(p, dtype=_BLOB_DTYPE).tobytes()
        for p in model.params
    )
    return {
        "format": MODEL_FORMAT,
        "version": FORMAT_VERSION,
        "arch": _arch_to_dict(model.arch),
        "params": {
            "dtype": _BLOB_DTYPE,
            "shapes": [[int(s) for s in p.shape] for p in model.params],
            "blob": base64.b64encode(blob).decode("ascii"),
        },
        "train_meta": _jsonable_meta(model.train_meta),
    }


def model_from_dict(body: dict) -> nets.Model:
    """Rebuild a model from a verified checkpoint body."""
    arch = _arch_from_dict(body["arch"])
    params_block = body["params"]
    if params_block.get("dtype") != _BLOB_DTYPE:
        raise CheckpointVersionError(
            f"unsupported parameter dtype {params_block.get('dtype')!r}"
        )
    try:
        raw = base64.b64decode(params_block["blob"].encode("ascii"),
                               validate=True)
    except Exception as exc:
        raise CheckpointTruncatedError(f"parameter blob undecodable: {exc}")
    shapes = [tuple(int(s) for s in shape)
              for shape in params_block["shapes"]]
    need = sum(int(np.prod(s)) for s in shapes) * 8
    if len(raw) != need:
        raise CheckpointTruncatedError(
            f"parameter blob holds {len(raw)} bytes, shapes need {need}"
        )
    params, offset = [], 0
    for shape in shapes:
        count = int(np.prod(shape))
        chunk = np.frombuffer(raw, dtype=_BLOB_DTYPE, count=count,
                              offset=offset)
        params.append(chunk.reshape(shape).copy())
        offset += count * 8
    return nets.Model(arch, tuple(params), dict(body.get("train_meta", {})))


def _load_body(path: str, expected_format: str) -> dict:
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    try:
        body = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointTruncatedError(
            f"{path}: not a complete checkpoint file ({exc})"
        )
    if not isinstance(body, dict):
        raise CheckpointTruncatedError(f"{path}: checkpoint is not an object")
    fmt, version = body.get("format"), body.get("version")
    if fmt != expected_format or version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: expected format {expected_format!r} version "
            f"{FORMAT_VERSION}, found {fmt!r} version {version!r}"
        )
    stored = body.pop("checksum", None)
    if stored is None:
        raise CheckpointTruncatedError(f"{path}: missing checksum field")
    if stored != _checksum(body):
        raise CheckpointChecksumError(f"{path}: checksum mismatch")
    return body


def save_checkpoint(model: nets.Model, path: str) -> None:
    """Write one model checkpoint atomically."""
    atomic_write_text(path, _seal(model_to_dict(model)))


def load_checkpoint(path: str) -> nets.Model:
    """Load a model checkpoint, verifying version and checksum."""
    body = _load_body(path, MODEL_FORMAT)
    try:
        return model_from_dict(body)
    except (KeyError, TypeError) as exc:
        raise CheckpointTruncatedError(f"{path}: malformed checkpoint: {exc}")


# ---------------------------------------------------------------------------
# collection persistence

def _entry_filename(entry: CollectionEntry) -> str:
    return "entry-%s.ckpt" % entry.entry_id.replace(":", "_")


def save_collection(collection: ModelCollection, directory: str) -> str:
    """Write every model plus a manifest into `directory`; returns the
    manifest path."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for entry in collection.entries:
        filename = _entry_filename(entry)
        save_checkpoint(entry.model, os.path.join(directory, filename))
        entries.append({
            "entry_id": entry.entry_id,
            "arch_id": entry.arch_id,
            "sigma": float(entry.sigma),
            "aca": None if np.isnan(entry.aca) else float(entry.aca),
            "unsmoothable": bool(entry.unsmoothable),
            "file": filename,
        })
    plain = {}
    for arch_id in sorted(collection.plain_models):
        filename = "plain-%s.ckpt" % arch_id.replace(":", "_")
        save_checkpoint(collection.plain_models[arch_id],
                        os.path.join(directory, filename))
        plain[arch_id] = filename
    body = {
        "format": COLLECTION_FORMAT,
        "version": FORMAT_VERSION,
        "entries": entries,
        "quantity_options": [int(q) for q in collection.quantity_options],
        "plain_models": plain,
    }
    manifest = os.path.join(directory, "collection.json")
    atomic_write_text(manifest, _seal(body))
    return manifest


def load_collection(directory: str) -> ModelCollection:
    """Load a collection saved by save_collection."""
    manifest = os.path.join(directory, "collection.json")
    body = _load_body(manifest, COLLECTION_FORMAT)
    try:
        entries = []
        for rec in body["entries"]:
            model = load_checkpoint(os.path.join(directory, rec["file"]))
            aca = rec["aca"]
            entries.append(CollectionEntry(
                rec["entry_id"], rec["arch_id"], float(rec["sigma"]), model,
                float("nan") if aca is None else float(aca),
                bool(rec["unsmoothable"]),
            ))
        plain = {
            arch_id: load_checkpoint(os.path.join(directory, filename))
            for arch_id, filename in body["plain_models"].items()
        }
        quantities = tuple(int(q) for q in body["quantity_options"])
    except (KeyError, TypeError) as exc:
        raise CheckpointTruncatedError(f"{manifest}: malformed manifest: {exc}")
    return ModelCollection(tuple(entries), quantities, plain)
