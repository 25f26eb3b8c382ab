"""On-disk formats for samples, volumes, and dataset manifests.

Sample tensors: magic ``VPAT`` | u32 channels | u32 height | u32 width |
float32 LE row-major payload. Volumes: magic ``VVOL`` | u32 z | u32 y |
u32 x | float32 LE payload | JSON centroid trailer. Manifests are canonical
JSON (sorted keys, compact separators) so their SHA-256 digest is stable.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..mining import GradeLabel, RegionLabel
from .patches import PatchSample
from .volume import SpineVolume

VPAT_MAGIC = b"VPAT"
VVOL_MAGIC = b"VVOL"


def write_sample_tensor(path, channels: np.ndarray) -> None:
    channels = np.asarray(channels, dtype="<f4")
    if channels.ndim != 3:
        raise ValueError(f"expected (channels, H, W), got shape {channels.shape}")
    with open(path, "wb") as fh:
        fh.write(VPAT_MAGIC)
        fh.write(struct.pack("<III", *channels.shape))
        fh.write(np.ascontiguousarray(channels).tobytes())


def read_sample_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != VPAT_MAGIC:
        raise ValueError(f"{path}: not a sample tensor file")
    c, h, w = struct.unpack("<III", data[4:16])
    arr = np.frombuffer(data[16:], dtype="<f4")
    if arr.size != c * h * w:
        raise ValueError(f"{path}: payload size mismatch")
    return arr.reshape(c, h, w).copy()


def write_volume(path, volume: SpineVolume) -> None:
    vox = np.asarray(volume.voxels, dtype="<f4")
    trailer = json.dumps(
        {
            "centroids": [
                {"label": name, "position": [float(v) for v in pos]}
                for name, pos in volume.centroids
            ],
            "grades": [int(g) for g in volume.grades],
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(VVOL_MAGIC)
        fh.write(struct.pack("<III", *vox.shape))
        fh.write(np.ascontiguousarray(vox).tobytes())
        fh.write(trailer)


def read_volume(path) -> SpineVolume:
    data = Path(path).read_bytes()
    if data[:4] != VVOL_MAGIC:
        raise ValueError(f"{path}: not a volume file")
    z, y, x = struct.unpack("<III", data[4:16])
    nbytes = z * y * x * 4
    vox = np.frombuffer(data[16 : 16 + nbytes], dtype="<f4").reshape(z, y, x).copy()
    trailer = json.loads(data[16 + nbytes :].decode("utf-8"))
    centroids = [(c["label"], tuple(c["position"])) for c in trailer["centroids"]]
    grades = [GradeLabel(g) for g in trailer.get("grades", [])]
    return SpineVolume(voxels=vox, centroids=centroids, grades=grades)


def manifest_json(manifest: dict) -> str:
    return json.dumps(manifest, sort_keys=True, separators=(",", ":"))


def manifest_digest(manifest: dict) -> str:
    return hashlib.sha256(manifest_json(manifest).encode("utf-8")).hexdigest()


def save_dataset(samples, manifest: dict, out_dir) -> dict:
    """Write each sample as a VPAT file plus the manifest; returns the
    manifest with file paths filled in."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = json.loads(json.dumps(manifest))  # deep copy
    for sample, entry in zip(samples, manifest["samples"]):
        fname = f"sample_{sample.id:06d}.vpat"
        write_sample_tensor(out_dir / fname, sample.to_tensor())
        entry["file"] = fname
    (out_dir / "manifest.json").write_text(manifest_json(manifest))
    return manifest


def load_dataset(manifest_path):
    """Load samples listed in a manifest back into PatchSample objects."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    samples = []
    for entry in manifest["samples"]:
        tensor = read_sample_tensor(base / entry["file"])
        samples.append(
            PatchSample(
                image=tensor[0],
                heatmap=tensor[1],
                grade=GradeLabel(entry["grade"]),
                region=RegionLabel(entry["region"]),
                id=entry["id"],
                params=entry.get("params", {}),
            )
        )
    return samples, manifest
