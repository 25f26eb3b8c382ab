"""Model checkpoint file format.

Layout: magic ``GMCK`` | version u32 LE | manifest length u32 LE |
manifest JSON (utf-8) | raw float32 little-endian tensor payloads in
manifest order. The manifest records the network configuration, the
mounted head, and every tensor's name/shape/dtype (trainable parameters
plus batch-norm running statistics). save -> load -> save reproduces the
file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import NetworkConfig, PatchEncoder

MAGIC = b"GMCK"
VERSION = 1


def _all_tensors(model: PatchEncoder) -> dict:
    tensors = dict(model.parameters())
    tensors.update(model.bn_stats())
    return tensors


def save_model(model: PatchEncoder, path) -> None:
    """Write a checkpoint. Tensors are stored as float32 regardless of the
    in-memory dtype (the format is fixed)."""
    tensors = _all_tensors(model)
    names = sorted(tensors)
    manifest = {
        "config": model.config.to_dict(),
        "head": model.head,
        "tensors": [
            {"name": n, "shape": list(tensors[n].shape), "dtype": "float32"}
            for n in names
        ],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(tensors[n], dtype="<f4").tobytes())


def load_model(path) -> PatchEncoder:
    """Reconstruct a model from a checkpoint; loads in eval mode."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic {data[:4]!r})")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (mlen,) = struct.unpack("<I", data[8:12])
    manifest = json.loads(data[12 : 12 + mlen].decode("utf-8"))

    config = NetworkConfig.from_dict(manifest["config"])
    model = PatchEncoder(config, seed=0)
    if manifest["head"] != model.head:
        model.swap_head(manifest["head"], seed=0)
    model.mode = "eval"

    tensors = _all_tensors(model)
    offset = 12 + mlen
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in tensors:
            raise ValueError(f"{path}: unknown tensor {name!r} in manifest")
        if tensors[name].shape != shape:
            raise ValueError(
                f"{path}: tensor {name!r} shape {shape} does not match "
                f"model shape {tensors[name].shape}"
            )
        nbytes = int(np.prod(shape)) * 4 if shape else 4
        raw = np.frombuffer(data[offset : offset + nbytes], dtype="<f4")
        tensors[name][...] = raw.reshape(shape).astype(config.np_dtype)
        offset += nbytes
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return model
