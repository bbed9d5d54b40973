"""Single-file checkpoint container.

Layout: one magic+version line, one line with the manifest byte length, a
JSON manifest (tensor names, dtypes, shapes, offsets, checksums, plus
step/seed metadata and a config snapshot), then the raw tensor buffers in
little-endian order. Loading is strict: version mismatches, truncation,
checksum failures and shape mismatches all raise ``CheckpointError``.
"""
from __future__ import annotations

import json
import zlib
from typing import Dict, Mapping, NamedTuple

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = "OUTPAINTCKPT"
VERSION = 1

_DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "i64": np.dtype("<i8"),
    "u8": np.dtype("u1"),
}
_TORCH_TO_TAG = {
    torch.float32: "f32",
    torch.float64: "f64",
    torch.int64: "i64",
    torch.uint8: "u8",
}


class Container(NamedTuple):
    meta: Dict
    config_text: str
    tensors: Dict[str, torch.Tensor]


def save_container(path, tensors: Mapping[str, torch.Tensor], meta: Dict,
                   config_text: str = "") -> None:
    entries = []
    buffers = []
    offset = 0
    for name, tensor in tensors.items():
        t = tensor.detach().cpu()
        tag = _TORCH_TO_TAG.get(t.dtype)
        if tag is None:
            raise CheckpointError(f"unsupported dtype {t.dtype} for '{name}'")
        raw = np.ascontiguousarray(t.numpy()).astype(_DTYPES[tag]).tobytes()
        entries.append({
            "name": name,
            "dtype": tag,
            "shape": list(t.shape),
            "offset": offset,
            "nbytes": len(raw),
            "crc32": zlib.crc32(raw),
        })
        buffers.append(raw)
        offset += len(raw)
    manifest = json.dumps({
        "version": VERSION,
        "meta": meta,
        "config": config_text,
        "tensors": entries,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {VERSION}\n".encode("ascii"))
        fh.write(f"{len(manifest)}\n".encode("ascii"))
        fh.write(manifest)
        for raw in buffers:
            fh.write(raw)


def load_container(path) -> Container:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    try:
        magic_end = blob.index(b"\n")
        magic_line = blob[:magic_end].decode("ascii")
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint container") from exc
    parts = magic_line.split()
    if len(parts) != 2 or parts[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container")
    if parts[1] != str(VERSION):
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {parts[1]} "
            f"(this build reads version {VERSION})")

    try:
        len_end = blob.index(b"\n", magic_end + 1)
        manifest_len = int(blob[magic_end + 1:len_end])
        manifest_start = len_end + 1
        manifest = json.loads(blob[manifest_start:manifest_start + manifest_len])
    except (ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest: {exc}") from exc

    data = blob[manifest_start + manifest_len:]
    tensors: Dict[str, torch.Tensor] = {}
    for entry in manifest["tensors"]:
        name = entry["name"]
        raw = data[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(
                f"{path}: truncated data for '{name}' "
                f"({len(raw)} of {entry['nbytes']} bytes)")
        if zlib.crc32(raw) != entry["crc32"]:
            raise CheckpointError(f"{path}: checksum mismatch for '{name}'")
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]])
        tensors[name] = torch.from_numpy(arr.copy()).reshape(entry["shape"])
    return Container(meta=manifest["meta"], config_text=manifest["config"],
                     tensors=tensors)


def module_tensors(module: torch.nn.Module, prefix: str) -> Dict[str, torch.Tensor]:
    """Named parameters of a module under a checkpoint name prefix."""
    return {f"{prefix}.{name}": p for name, p in module.named_parameters()}


def apply_module_tensors(module: torch.nn.Module, prefix: str,
                         tensors: Mapping[str, torch.Tensor]) -> None:
    """Copy stored tensors into a module's parameters, validating shapes."""
    with torch.no_grad():
        for name, param in module.named_parameters():
            key = f"{prefix}.{name}"
            if key not in tensors:
                raise CheckpointError(f"checkpoint is missing tensor '{key}'")
            stored = tensors[key]
            if tuple(stored.shape) != tuple(param.shape):
                raise CheckpointError(
                    f"shape mismatch for '{key}': checkpoint has "
                    f"{tuple(stored.shape)}, model expects {tuple(param.shape)}")
            param.copy_(stored.to(param.dtype))
