"""Single-file checkpoints: length-prefixed JSON header plus raw tensor bytes.

Layout: 8-byte little-endian header length, the UTF-8 header JSON, then each
tensor's bytes in header order.  The header records name, shape, dtype and
role per tensor plus run metadata (optimizer step count included), which is
everything a warm start needs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from hpxfer.model import DeskTransformer
from hpxfer.optim import PerTensorAdamW

__all__ = ["save_checkpoint", "load_checkpoint", "restore_into"]

_MAGIC_VERSION = 1


def _entries(name_prefix: str, tensors: dict[str, np.ndarray], roles: dict[str, str]):
    for name, tensor in tensors.items():
        yield {
            "name": f"{name_prefix}{name}",
            "shape": list(tensor.shape),
            "dtype": str(tensor.dtype),
            "role": roles.get(name, ""),
        }, np.ascontiguousarray(tensor)


def save_checkpoint(
    path: str | Path,
    model: DeskTransformer,
    optimizer: PerTensorAdamW | None = None,
    global_step: int = 0,
    extra: dict | None = None,
) -> None:
    roles = {name: spec.role.value for name, spec in model.specs.items()}
    groups = [("param/", model.params)]
    if optimizer is not None:
        groups += [("adam_m/", optimizer.m), ("adam_v/", optimizer.v)]
    header_entries = []
    blobs = []
    for prefix, tensors in groups:
        for entry, blob in _entries(prefix, tensors, roles):
            header_entries.append(entry)
            blobs.append(blob)
    header = {
        "version": _MAGIC_VERSION,
        "global_step": global_step,
        "optimizer_steps": optimizer.step_count if optimizer is not None else 0,
        "extra": extra or {},
        "tensors": header_entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob.tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return (header, tensors keyed by their prefixed names)."""
    with open(path, "rb") as fh:
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("version") != _MAGIC_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
        tensors = {}
        for entry in header["tensors"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            dtype = np.dtype(entry["dtype"])
            raw = fh.read(count * dtype.itemsize)
            tensors[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).copy()
    return header, tensors


def restore_into(
    path: str | Path, model: DeskTransformer, optimizer: PerTensorAdamW | None = None
) -> int:
    """Load a checkpoint into existing model/optimizer state; returns global_step."""
    header, tensors = load_checkpoint(path)
    for name in model.params:
        model.params[name][...] = tensors[f"param/{name}"]
    if optimizer is not None:
        for name in optimizer.m:
            optimizer.m[name][...] = tensors[f"adam_m/{name}"]
            optimizer.v[name][...] = tensors[f"adam_v/{name}"]
        optimizer.step_count = header["optimizer_steps"]
    return header["global_step"]
