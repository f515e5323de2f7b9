"""Assemble 2-D frames into a 3-D voxel volume.

Every frame pixel is mapped through its absolute transform and splatted
onto the nearest voxel; voxel intensity is the running mean of its
contributions, which makes overlapping sweeps unbiased and total mass
(count-weighted sum) exactly conserved. The grid is auto-fitted to the
transformed frames with a one-voxel margin unless an explicit grid is
given.

Volume file (FVL1, little-endian): magic "FVL1", u32 dims x3, f32
voxel_mm, f32 origin x3, then f32 voxels with x fastest; a JSON sidecar
carries provenance.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .pose import ImageGeometry, TransformSE3, frame_grid_points

__all__ = ["VolumeGrid", "compound", "fill_holes", "write_volume", "read_volume"]

VOLUME_MAGIC = b"FVL1"


@dataclass(frozen=True)
class VolumeGrid:
    intensity: np.ndarray
    counts: np.ndarray
    origin_mm: np.ndarray
    voxel_mm: float

    def __post_init__(self) -> None:
        if self.intensity.shape != self.counts.shape:
            raise ValueError("intensity and count grids must share a shape")
        if self.voxel_mm <= 0:
            raise ValueError("voxel size must be positive")
        if np.any((self.intensity > 0) & (self.counts == 0)):
            raise ValueError("intensity present in voxels with zero count")

    @property
    def dims(self) -> tuple:
        return self.intensity.shape

    @property
    def occupancy(self) -> float:
        return float((self.counts > 0).mean())

    def mass(self) -> float:
        """Count-weighted intensity sum (conserved by mean splatting)."""
        return float((self.intensity * self.counts).sum())


def _frame_points(frames_shape, geometry, transforms):
    pixels = geometry.full_pixel_grid()
    return [frame_grid_points(t, geometry, pixels) for t in transforms]


def compound(frames: np.ndarray, transforms: Sequence[TransformSE3],
             geometry: ImageGeometry, voxel_mm: float,
             origin_mm: np.ndarray | None = None,
             dims: tuple | None = None) -> VolumeGrid:
    """Splat frames into a voxel grid along their absolute transforms."""
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 3 or frames.shape[0] == 0:
        raise ValueError(f"need a non-empty (n, h, w) frame stack, got {frames.shape}")
    if len(transforms) != frames.shape[0]:
        raise ValueError(
            f"{frames.shape[0]} frames but {len(transforms)} transforms"
        )
    if voxel_mm <= 0:
        raise ValueError("voxel size must be positive")

    points = _frame_points(frames.shape, geometry, transforms)
    if origin_mm is None or dims is None:
        lo = np.min([p.min(axis=0) for p in points], axis=0)
        hi = np.max([p.max(axis=0) for p in points], axis=0)
        origin_mm = lo - voxel_mm  # one-voxel margin
        dims = tuple(np.rint((hi - origin_mm) / voxel_mm).astype(int) + 2)
    else:
        origin_mm = np.asarray(origin_mm, dtype=float)
        dims = tuple(int(d) for d in dims)

    sums = np.zeros(dims)
    counts = np.zeros(dims, dtype=np.int64)
    for frame, pts in zip(frames, points):
        idx = np.rint((pts - origin_mm) / voxel_mm).astype(int)
        valid = np.all((idx >= 0) & (idx < np.array(dims)), axis=1)
        ix, iy, iz = idx[valid, 0], idx[valid, 1], idx[valid, 2]
        np.add.at(sums, (ix, iy, iz), frame.reshape(-1)[valid])
        np.add.at(counts, (ix, iy, iz), 1)
    intensity = np.divide(sums, counts, out=np.zeros(dims),
                          where=counts > 0)
    return VolumeGrid(intensity=intensity, counts=counts,
                      origin_mm=np.asarray(origin_mm, dtype=float),
                      voxel_mm=float(voxel_mm))


def fill_holes(volume: VolumeGrid, radius_voxels: int) -> VolumeGrid:
    """Fill empty voxels from filled neighbors within a Euclidean radius,
    weighting contributions by inverse distance. Filled voxels are left
    untouched; off by default in the pipeline."""
    if radius_voxels < 1:
        raise ValueError("radius must be at least 1 voxel")
    filled = volume.counts > 0
    weight_sum = np.zeros(volume.dims)
    value_sum = np.zeros(volume.dims)
    r = radius_voxels
    for ox in range(-r, r + 1):
        for oy in range(-r, r + 1):
            for oz in range(-r, r + 1):
                dist = np.sqrt(ox * ox + oy * oy + oz * oz)
                if dist == 0.0 or dist > r:
                    continue
                src = [slice(max(0, -o), min(n, n - o))
                       for o, n in zip((ox, oy, oz), volume.dims)]
                dst = [slice(max(0, o), min(n, n + o))
                       for o, n in zip((ox, oy, oz), volume.dims)]
                src, dst = tuple(src), tuple(dst)
                contrib = filled[src] / dist
                weight_sum[dst] += contrib
                value_sum[dst] += volume.intensity[src] * contrib
    fillable = ~filled & (weight_sum > 0)
    intensity = volume.intensity.copy()
    counts = volume.counts.copy()
    intensity[fillable] = value_sum[fillable] / weight_sum[fillable]
    counts[fillable] = 1
    return VolumeGrid(intensity=intensity, counts=counts,
                      origin_mm=volume.origin_mm, voxel_mm=volume.voxel_mm)


def write_volume(path, volume: VolumeGrid, provenance: dict | None = None) -> Path:
    path = Path(path)
    with open(path, "wb") as handle:
        handle.write(VOLUME_MAGIC)
        handle.write(struct.pack("<III", *volume.dims))
        handle.write(struct.pack("<f", volume.voxel_mm))
        handle.write(struct.pack("<fff", *volume.origin_mm))
        handle.write(
            np.ascontiguousarray(volume.intensity, dtype="<f4")
            .flatten(order="F").tobytes()
        )
    sidecar = dict(provenance or {})
    sidecar.setdefault("voxel_mm", volume.voxel_mm)
    sidecar["dims"] = list(volume.dims)
    with open(path.with_suffix(path.suffix + ".json"), "w", encoding="utf-8") as handle:
        json.dump(sidecar, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def read_volume(path):
    """Read an FVL1 volume; returns (intensity, origin_mm, voxel_mm, sidecar)."""
    path = Path(path)
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:4] != VOLUME_MAGIC:
        raise ValueError(f"{path}: bad volume magic")
    dims = struct.unpack_from("<III", blob, 4)
    (voxel_mm,) = struct.unpack_from("<f", blob, 16)
    origin = np.array(struct.unpack_from("<fff", blob, 20))
    count = dims[0] * dims[1] * dims[2]
    voxels = np.frombuffer(blob, dtype="<f4", count=count, offset=32)
    intensity = voxels.reshape(dims, order="F").astype(np.float64)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    sidecar = {}
    if sidecar_path.exists():
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    return intensity, origin, float(voxel_mm), sidecar
