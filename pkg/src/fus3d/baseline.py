"""Classical sensorless tracking baseline.

In-plane translation comes from the NCC peak between consecutive
frames (integer search plus 3-point parabolic subpixel refinement);
out-of-plane translation comes from a calibrated lookup that maps the
residual patch NCC, after in-plane alignment, to an elevational
distance. Rotations are reported as zero; this is a translation-only
sanity baseline, not a 6-DoF competitor.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pose import PoseVector

__all__ = [
    "CalibrationError",
    "DecorrModel",
    "BaselineStep",
    "mean_patch_ncc",
    "calibrate",
    "calibration_pairs_from_scan",
    "estimate_step",
    "estimate_step_detailed",
]

DEFAULT_PATCH_GRID = (5, 5)
DEFAULT_PATCH_EXTENT = 32
DEFAULT_SEARCH_PX = 6
_PERFECT = 1.0 - 1e-12


class CalibrationError(ValueError):
    """Raised when the empirical NCC-vs-gap curve cannot be fitted."""


def _ncc(a: np.ndarray, b: np.ndarray) -> float:
    ac = a - a.mean()
    bc = b - b.mean()
    denom = np.sqrt((ac * ac).sum() * (bc * bc).sum())
    if denom == 0.0:
        return 0.0
    return float((ac * bc).sum() / denom)


def mean_patch_ncc(a: np.ndarray, b: np.ndarray,
                   grid: tuple = DEFAULT_PATCH_GRID,
                   extent: int = DEFAULT_PATCH_EXTENT) -> float:
    """Mean NCC over a grid of patches spread across the frames."""
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    h, w = a.shape
    gy, gx = grid
    if h < extent or w < extent:
        return _ncc(a, b)
    tops_y = np.linspace(0, h - extent, gy).round().astype(int)
    tops_x = np.linspace(0, w - extent, gx).round().astype(int)
    values = [
        _ncc(a[ty : ty + extent, tx : tx + extent],
             b[ty : ty + extent, tx : tx + extent])
        for ty in tops_y
        for tx in tops_x
    ]
    return float(np.mean(values))


@dataclass(frozen=True)
class DecorrModel:
    """Monotone piecewise-linear map between patch NCC and elevational gap.

    ``gap_mm`` ascends from 0 and ``ncc`` strictly descends from 1; frames
    matching better than the first knot read as gap 0, frames worse than
    the last knot clamp to the maximum calibrated gap.
    """

    gap_mm: np.ndarray
    ncc: np.ndarray
    patch_grid: tuple = DEFAULT_PATCH_GRID
    patch_extent: int = DEFAULT_PATCH_EXTENT

    def __post_init__(self) -> None:
        gaps = np.asarray(self.gap_mm, dtype=float)
        nccs = np.asarray(self.ncc, dtype=float)
        if gaps.shape != nccs.shape or gaps.ndim != 1 or gaps.size < 2:
            raise ValueError("calibration table needs matching 1-d arrays (>= 2 points)")
        if np.any(np.diff(gaps) <= 0):
            raise CalibrationError("calibration gaps must strictly increase")
        if np.any(np.diff(nccs) >= 0):
            raise CalibrationError(
                "empirical NCC curve is not strictly decreasing over distance"
            )
        object.__setattr__(self, "gap_mm", gaps)
        object.__setattr__(self, "ncc", nccs)

    @property
    def ncc_floor(self) -> float:
        return float(self.ncc[-1])

    def lookup(self, ncc_value: float):
        """Gap for an NCC value; returns (gap_mm, clamped)."""
        if ncc_value >= self.ncc[0]:
            return float(self.gap_mm[0]), False
        if ncc_value <= self.ncc_floor:
            return float(self.gap_mm[-1]), True
        gap = np.interp(ncc_value, self.ncc[::-1], self.gap_mm[::-1])
        return float(gap), False

    def save_csv(self, path) -> None:
        with open(path, "w", newline="\n", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["ncc", "gap_mm"])
            for n, g in zip(self.ncc, self.gap_mm):
                writer.writerow([repr(float(n)), repr(float(g))])

    @classmethod
    def load_csv(cls, path) -> "DecorrModel":
        nccs, gaps = [], []
        with open(path, "r", newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader)
            if header != ["ncc", "gap_mm"]:
                raise ValueError(f"unexpected calibration header: {header}")
            for row in reader:
                if row:
                    nccs.append(float(row[0]))
                    gaps.append(float(row[1]))
        return cls(gap_mm=np.asarray(gaps), ncc=np.asarray(nccs))


def calibrate(pairs, patch_grid: tuple = DEFAULT_PATCH_GRID,
              patch_extent: int = DEFAULT_PATCH_EXTENT) -> DecorrModel:
    """Fit the NCC-vs-gap table from (frame_a, frame_b, gap_mm) pairs.

    NCC values are averaged per distinct gap; a (0, 1) anchor is implied.
    Raises :class:`CalibrationError` when the averaged curve is not
    strictly decreasing.
    """
    pairs = list(pairs)
    if len(pairs) < 10:
        raise ValueError(f"calibration needs at least 10 pairs, got {len(pairs)}")
    by_gap: dict = {}
    for f_a, f_b, gap in pairs:
        if gap < 0:
            raise ValueError("calibration gaps must be nonnegative")
        by_gap.setdefault(round(float(gap), 9), []).append(
            mean_patch_ncc(f_a, f_b, patch_grid, patch_extent)
        )
    gaps = np.array(sorted(by_gap))
    nccs = np.array([np.mean(by_gap[g]) for g in gaps])
    if gaps[0] > 0.0:
        gaps = np.concatenate([[0.0], gaps])
        nccs = np.concatenate([[1.0], nccs])
    else:
        nccs[0] = 1.0  # gap-0 pairs anchor the curve at NCC 1 exactly
    return DecorrModel(gap_mm=gaps, ncc=nccs,
                       patch_grid=patch_grid, patch_extent=patch_extent)


def calibration_pairs_from_scan(scan, lags=(1, 2, 3, 4)) -> list:
    """Held-out calibration pairs from a simulated scan with known poses."""
    centers = np.stack([t.translation for t in scan.truth])
    out = []
    for lag in lags:
        for i in range(0, scan.n_frames - lag, max(1, lag)):
            gap = abs(centers[i + lag, 2] - centers[i, 2])
            out.append((scan.frames[i], scan.frames[i + lag], gap))
    return out


def _shift_ncc_surface(current: np.ndarray, reference: np.ndarray,
                       max_shift: int) -> np.ndarray:
    """NCC of current[r, c] against reference[r + ky, c + kx] per shift."""
    h, w = current.shape
    size = 2 * max_shift + 1
    surface = np.full((size, size), -np.inf)
    for iy, ky in enumerate(range(-max_shift, max_shift + 1)):
        for ix, kx in enumerate(range(-max_shift, max_shift + 1)):
            cy0, cy1 = max(0, -ky), min(h, h - ky)
            cx0, cx1 = max(0, -kx), min(w, w - kx)
            cur = current[cy0:cy1, cx0:cx1]
            ref = reference[cy0 + ky : cy1 + ky, cx0 + kx : cx1 + kx]
            surface[iy, ix] = _ncc(cur, ref)
    return surface


def _parabolic_offset(c_minus: float, c_0: float, c_plus: float) -> float:
    denom = c_minus - 2.0 * c_0 + c_plus
    if denom >= 0.0:
        return 0.0  # flat or non-concave: keep the integer peak
    offset = 0.5 * (c_minus - c_plus) / denom
    return float(np.clip(offset, -0.5, 0.5))


@dataclass(frozen=True)
class BaselineStep:
    pose: PoseVector
    mean_ncc: float
    peak_ncc: float
    clamped: bool


def estimate_step_detailed(f_i: np.ndarray, f_next: np.ndarray,
                           model: DecorrModel,
                           max_shift_px: int = DEFAULT_SEARCH_PX,
                           pitch_mm: tuple = (0.1484, 0.1484)) -> BaselineStep:
    if f_i.shape != f_next.shape:
        raise ValueError(f"frame shapes differ: {f_i.shape} vs {f_next.shape}")
    surface = _shift_ncc_surface(f_next, f_i, max_shift_px)
    iy, ix = np.unravel_index(surface.argmax(), surface.shape)
    peak = surface[iy, ix]
    ky = iy - max_shift_px
    kx = ix - max_shift_px

    # subpixel refinement, skipped on a perfect match so that exact pixel
    # shifts (and identical frames) come back exactly
    dy = dx = 0.0
    if peak < _PERFECT:
        if 0 < iy < surface.shape[0] - 1:
            dy = _parabolic_offset(surface[iy - 1, ix], peak, surface[iy + 1, ix])
        if 0 < ix < surface.shape[1] - 1:
            dx = _parabolic_offset(surface[iy, ix - 1], peak, surface[iy, ix + 1])

    # residual decorrelation after integer in-plane alignment
    h, w = f_i.shape
    cy0, cy1 = max(0, -ky), min(h, h - ky)
    cx0, cx1 = max(0, -kx), min(w, w - kx)
    aligned_cur = f_next[cy0:cy1, cx0:cx1]
    aligned_ref = f_i[cy0 + ky : cy1 + ky, cx0 + kx : cx1 + kx]
    residual = mean_patch_ncc(aligned_cur, aligned_ref,
                              model.patch_grid, model.patch_extent)
    tz, clamped = model.lookup(residual)

    pose = PoseVector(
        tx=(ky + dy) * pitch_mm[0],
        ty=(kx + dx) * pitch_mm[1],
        tz=tz,
    )
    return BaselineStep(pose=pose, mean_ncc=residual, peak_ncc=float(peak),
                        clamped=clamped)


def estimate_step(f_i: np.ndarray, f_next: np.ndarray, model: DecorrModel,
                  max_shift_px: int = DEFAULT_SEARCH_PX,
                  pitch_mm: tuple = (0.1484, 0.1484)) -> PoseVector:
    """Translation-only motion estimate between consecutive frames."""
    return estimate_step_detailed(f_i, f_next, model, max_shift_px, pitch_mm).pose
