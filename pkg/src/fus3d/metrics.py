"""Trajectory evaluation metrics.

Seven numbers summarize how well an estimated scan trajectory matches
the truth: relative/accumulated average errors on 6-DoF pose vectors
(rAE, aAE; mm and degrees mixed), relative/accumulated frame errors as
grid-point distances (rFE, aFE; mm), trajectory-shape correlation
(corr), final drift (fd; mm) and final drift rate (fdr; percent of the
true path length).

Frame errors use five grid points per frame (the four corners plus the
center) at the stated pixel pitch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .pose import (
    ImageGeometry,
    PoseVector,
    TransformSE3,
    frame_grid_points,
    relative_transform,
    transform_to_pose,
)

__all__ = [
    "MetricsReport",
    "MetricsBreakdown",
    "relative_errors",
    "frame_error_series",
    "accumulated_errors",
    "evaluate_trajectories",
    "METRICS_CSV_HEADER",
]

METRICS_CSV_HEADER = "rAE,aAE,rFE,aFE,corr,fd,fdr"


@dataclass(frozen=True)
class MetricsReport:
    rae: float
    aae: float
    rfe: float
    afe: float
    corr: float
    fd: float
    fdr: float

    def __post_init__(self) -> None:
        for name in ("rae", "aae", "rfe", "afe", "fd", "fdr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not -1.0 <= self.corr <= 1.0:
            raise ValueError(f"corr must lie in [-1, 1], got {self.corr}")

    def as_json_dict(self) -> dict:
        return {
            "rAE": self.rae,
            "aAE": self.aae,
            "rFE": self.rfe,
            "aFE": self.afe,
            "corr": self.corr,
            "fd": self.fd,
            "fdr": self.fdr,
        }

    def csv_row(self) -> str:
        return ",".join(
            repr(v) for v in (self.rae, self.aae, self.rfe, self.afe,
                              self.corr, self.fd, self.fdr)
        )


@dataclass(frozen=True)
class MetricsBreakdown:
    """Translation-only / rotation-only views of rAE and aAE."""

    rae_translation_mm: float
    rae_rotation_deg: float
    aae_translation_mm: float
    aae_rotation_deg: float


def _pose_matrix(poses: Sequence[PoseVector]) -> np.ndarray:
    return np.stack([p.as_array() for p in poses])


def relative_errors(true_rel: Sequence[PoseVector],
                    pred_rel: Sequence[PoseVector]) -> float:
    """rAE: mean absolute error over all steps and all six components."""
    if len(true_rel) != len(pred_rel):
        raise ValueError(
            f"length mismatch: {len(true_rel)} true vs {len(pred_rel)} predicted"
        )
    if not true_rel:
        raise ValueError("relative_errors needs at least one step")
    return float(np.abs(_pose_matrix(true_rel) - _pose_matrix(pred_rel)).mean())


def _grid(geometry: ImageGeometry) -> np.ndarray:
    return geometry.corner_and_center_pixels()


def frame_error_series(true_abs: Sequence[TransformSE3],
                       pred_abs: Sequence[TransformSE3],
                       geometry: ImageGeometry) -> np.ndarray:
    """Per-frame mean grid-point distance between true and predicted frames."""
    if len(true_abs) != len(pred_abs):
        raise ValueError(
            f"trajectory lengths differ: {len(true_abs)} vs {len(pred_abs)}"
        )
    pixels = _grid(geometry)
    out = np.empty(len(true_abs))
    for i, (t, p) in enumerate(zip(true_abs, pred_abs)):
        dt = frame_grid_points(t, geometry, pixels) - frame_grid_points(
            p, geometry, pixels
        )
        out[i] = np.linalg.norm(dt, axis=1).mean()
    return out


def _centers(transforms: Sequence[TransformSE3]) -> np.ndarray:
    return np.stack([t.translation for t in transforms])


def _trajectory_correlation(true_abs, pred_abs) -> float:
    """Cosine similarity of the mean-centered frame-center series,
    flattened over frames and axes. Zero-norm series give 0."""
    ct = _centers(true_abs)
    cp = _centers(pred_abs)
    ct = (ct - ct.mean(axis=0)).ravel()
    cp = (cp - cp.mean(axis=0)).ravel()
    denom = np.linalg.norm(ct) * np.linalg.norm(cp)
    if denom == 0.0:
        return 0.0
    return float(np.clip(ct @ cp / denom, -1.0, 1.0))


def accumulated_errors(true_abs: Sequence[TransformSE3],
                       pred_abs: Sequence[TransformSE3],
                       geometry: ImageGeometry):
    """All trajectory-level metrics: (aAE, rFE, aFE, fd, fdr, corr) plus
    the translation/rotation breakdown of aAE."""
    if len(true_abs) != len(pred_abs):
        raise ValueError(
            f"trajectory lengths differ: {len(true_abs)} vs {len(pred_abs)}"
        )
    if len(true_abs) < 2:
        raise ValueError("accumulated metrics need at least two frames")

    true_poses = _pose_matrix([transform_to_pose(t) for t in true_abs])
    pred_poses = _pose_matrix([transform_to_pose(t) for t in pred_abs])
    abs_err = np.abs(true_poses - pred_poses)
    aae = float(abs_err.mean())
    aae_t = float(abs_err[:, :3].mean())
    aae_r = float(abs_err[:, 3:].mean())

    pixels = _grid(geometry)
    rfe_terms = []
    for i in range(len(true_abs) - 1):
        rel_t = relative_transform(true_abs[i], true_abs[i + 1])
        rel_p = relative_transform(pred_abs[i], pred_abs[i + 1])
        diff = frame_grid_points(rel_t, geometry, pixels) - frame_grid_points(
            rel_p, geometry, pixels
        )
        rfe_terms.append(np.linalg.norm(diff, axis=1).mean())
    rfe = float(np.mean(rfe_terms))

    series = frame_error_series(true_abs, pred_abs, geometry)
    afe = float(series.mean())
    fd = float(series[-1])

    centers = _centers(true_abs)
    path_length = float(np.linalg.norm(np.diff(centers, axis=0), axis=1).sum())
    if path_length == 0.0:
        raise ValueError("true trajectory has zero length; fdr is undefined")
    fdr = 100.0 * fd / path_length

    corr = _trajectory_correlation(true_abs, pred_abs)
    return (aae, rfe, afe, fd, fdr, corr), (aae_t, aae_r)


def evaluate_trajectories(true_abs: Sequence[TransformSE3],
                          pred_abs: Sequence[TransformSE3],
                          geometry: ImageGeometry):
    """Full report for a pair of absolute trajectories.

    Relative poses are derived per step from the trajectories. Returns
    (MetricsReport, MetricsBreakdown).
    """
    true_rel = [
        transform_to_pose(relative_transform(true_abs[i], true_abs[i + 1]))
        for i in range(len(true_abs) - 1)
    ]
    pred_rel = [
        transform_to_pose(relative_transform(pred_abs[i], pred_abs[i + 1]))
        for i in range(len(pred_abs) - 1)
    ]
    rae = relative_errors(true_rel, pred_rel)
    rel_err = np.abs(_pose_matrix(true_rel) - _pose_matrix(pred_rel))
    (aae, rfe, afe, fd, fdr, corr), (aae_t, aae_r) = accumulated_errors(
        true_abs, pred_abs, geometry
    )
    report = MetricsReport(rae, aae, rfe, afe, corr, fd, fdr)
    breakdown = MetricsBreakdown(
        rae_translation_mm=float(rel_err[:, :3].mean()),
        rae_rotation_deg=float(rel_err[:, 3:].mean()),
        aae_translation_mm=aae_t,
        aae_rotation_deg=aae_r,
    )
    return report, breakdown
