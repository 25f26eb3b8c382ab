"""Synthetic labeled spine volumes.

Volumes are 1 mm isotropic grids with axes (z, y, x) = (cranio-caudal,
anterior-posterior, left-right). Vertebral bodies are stacked boxes along a
parameterized bowed centerline; each body may carry a grade deformation
(anterior wedge in the y direction). Centroids are recorded per vertebra in
voxel coordinates, strictly increasing in z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mining import GradeLabel, RegionLabel
from .patches import PhantomConfig, _column_heights

# T1..L5, cranio-caudal. Requests for n vertebrae take the last n names.
SPINE_NAMES = tuple(f"T{i}" for i in range(1, 13)) + tuple(f"L{i}" for i in range(1, 6))

_REGION_OF = {}
for _n in SPINE_NAMES:
    _level = int(_n[1:])
    if _n[0] == "T":
        _REGION_OF[_n] = (
            RegionLabel.T1_T5 if _level <= 5 else
            RegionLabel.T6_T9 if _level <= 9 else
            RegionLabel.T10_T12
        )
    else:
        _REGION_OF[_n] = RegionLabel.L1_L4 if _level <= 4 else RegionLabel.L5


def region_of_vertebra(name: str) -> RegionLabel:
    return _REGION_OF[name]


@dataclass
class SpineVolume:
    voxels: np.ndarray  # (Z, Y, X) float32, 1 mm isotropic
    centroids: list  # [(name, (z, y, x))], z strictly increasing
    grades: list  # GradeLabel per vertebra

    def mid_sagittal(self) -> np.ndarray:
        return self.voxels[:, :, self.voxels.shape[2] // 2]


def generate_spine_volume(
    config: PhantomConfig,
    n_vertebrae: int,
    curvature: float,
    grades,
    seed: int,
) -> SpineVolume:
    """Stack ``n_vertebrae`` bodies along a z-axis centerline bowed in y.

    ``curvature`` scales a sinusoidal anterior-posterior bow (0 = straight
    spine on integer-aligned voxel centers). Per-vertebra shape draws come
    from independent (seed, index) streams, so changing one vertebra's grade
    perturbs only that vertebra's voxels.
    """
    if not (1 <= n_vertebrae <= len(SPINE_NAMES)):
        raise ValueError(f"n_vertebrae must lie in [1, {len(SPINE_NAMES)}]")
    grades = [GradeLabel(g) for g in grades]
    if len(grades) != n_vertebrae:
        raise ValueError("grades length must equal n_vertebrae")

    names = SPINE_NAMES[len(SPINE_NAMES) - n_vertebrae :]
    layout_rng = np.random.default_rng([seed, 10_000])

    bodies = []
    for k, (name, grade) in enumerate(zip(names, grades)):
        rng = np.random.default_rng([seed, k])
        region = region_of_vertebra(name)
        (w_lo, w_hi), (h_lo, h_hi) = config.region_dims[region]
        width = int(rng.integers(int(w_lo), int(w_hi) + 1))
        depth = int(rng.integers(int(w_lo), int(w_hi) + 1))
        height = int(rng.integers(int(h_lo), int(h_hi) + 1))
        u = rng.random()
        if grade == GradeLabel.G0:
            loss = 0.0
        elif grade == GradeLabel.G2:
            lo, hi = config.g2_height_loss
            loss = lo + u * (hi - lo)
        else:
            lo, hi = config.g3_height_loss
            loss = lo + u * (hi - lo)
        intensity = rng.uniform(*config.body_intensity)
        bodies.append((name, grade, width, depth, height, loss, intensity))

    gaps = [int(layout_rng.integers(4, 9)) for _ in range(n_vertebrae - 1)]

    margin = 24
    z_positions = []
    z = margin + bodies[0][4] // 2
    for k in range(n_vertebrae):
        z_positions.append(z)
        if k + 1 < n_vertebrae:
            z += bodies[k][4] // 2 + gaps[k] + bodies[k + 1][4] // 2

    max_w = max(b[2] for b in bodies)
    max_d = max(b[3] for b in bodies)
    bow_amp = 20.0 * curvature
    z_dim = z_positions[-1] + bodies[-1][4] // 2 + margin
    y_dim = int(2 * ((max_d + 2 * abs(bow_amp)) // 2 + margin) + 1)  # odd: centered spine
    x_dim = int(2 * (max_w // 2 + margin) + 1)
    y_mid, x_mid = y_dim // 2, x_dim // 2

    z0, z1 = z_positions[0], z_positions[-1]

    def bow(zc: float) -> float:
        if curvature == 0.0 or z1 == z0:
            return 0.0
        return bow_amp * np.sin(np.pi * (zc - z0) / (z1 - z0))

    voxels = np.zeros((z_dim, y_dim, x_dim), dtype=np.float32)
    centroids = []
    for k, (name, grade, width, depth, height, loss, intensity) in enumerate(bodies):
        zc = z_positions[k]
        yc = y_mid + bow(zc)
        heights = _column_heights(depth, float(height), "wedge", loss)
        y_start = int(round(yc - depth / 2.0))
        z_bottom = zc + height / 2.0
        for j in range(depth):
            y = y_start + j
            if y < 0 or y >= y_dim:
                continue
            z_top = z_bottom - heights[j]
            lo = int(np.ceil(z_top))
            hi = int(np.floor(z_bottom))
            lo = max(lo, 0)
            hi = min(hi, z_dim - 1)
            if lo > hi:
                continue
            voxels[
                lo : hi + 1,
                y,
                x_mid - width // 2 : x_mid - width // 2 + width,
            ] = intensity
        centroids.append((name, (float(zc), float(yc), float(x_mid))))

    return SpineVolume(voxels=voxels, centroids=centroids, grades=grades)
