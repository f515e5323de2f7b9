"""Synthetic freehand speckle-scan generator.

A 3-D speckle phantom (complex scatterer noise blurred by an anisotropic
point-spread kernel, envelope-detected) is sliced along a parametric
probe trajectory with exact ground-truth poses. Frames decorrelate with
elevational distance at a rate set by the elevational kernel width,
which is the physical cue every motion estimator in this package relies
on.

Scan container on disk: a directory holding ``poses.csv`` (ground-truth
absolute poses), ``frames.bin`` (FUS1 binary, see :func:`write_scan`)
and ``manifest.json`` with the subject tag and generation parameters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .pose import (
    ImageGeometry,
    PoseVector,
    Trajectory,
    TransformSE3,
    extract_relatives,
    frame_grid_points,
    pose_to_transform,
    read_pose_csv,
    transform_to_pose,
    write_pose_csv,
)

__all__ = [
    "InclusionSpec",
    "PhantomSpec",
    "Phantom",
    "TrajectorySpec",
    "ScanSequence",
    "FrameOutOfBoundsError",
    "make_phantom",
    "make_trajectory",
    "slice_phantom",
    "write_scan",
    "read_scan",
]

FRAMES_MAGIC = b"FUS1"
DEFAULT_PITCH_MM = 0.1484
DEFAULT_FRAME_RATE_HZ = 20.0
# Rayleigh envelope from fully developed speckle: mean/std = sqrt(pi/(4-pi))
RAYLEIGH_SNR = float(np.sqrt(np.pi / (4.0 - np.pi)))


class FrameOutOfBoundsError(ValueError):
    def __init__(self, frame_index: int):
        super().__init__(
            f"frame {frame_index} leaves the phantom extent; enlarge the "
            "phantom or shorten the trajectory"
        )
        self.frame_index = frame_index


@dataclass(frozen=True)
class InclusionSpec:
    """Embedded structure: 'ellipsoid' uses radii_mm per axis, 'tube' is a
    cylinder along the elevational axis with radius radii_mm[0]. The
    scatterer amplitude inside is scaled by ``amplitude`` (0 = anechoic)."""

    kind: str
    center_mm: tuple
    radii_mm: tuple
    amplitude: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("ellipsoid", "tube"):
            raise ValueError(f"unknown inclusion kind {self.kind!r}")
        if self.amplitude < 0:
            raise ValueError("inclusion amplitude must be nonnegative")


@dataclass(frozen=True)
class PhantomSpec:
    extent_mm: tuple = (20.0, 20.0, 40.0)
    voxel_mm: float = 0.05
    psf_mm: tuple = (0.10, 0.18, 0.30)
    origin_mm: tuple | None = None
    inclusions: tuple = ()

    def __post_init__(self) -> None:
        if any(e <= 0 for e in self.extent_mm):
            raise ValueError("phantom extents must be positive")
        if self.voxel_mm <= 0:
            raise ValueError("voxel size must be positive")
        # the blur kernel must fit: require a few sigmas per axis
        if any(e < 4.0 * s for e, s in zip(self.extent_mm, self.psf_mm)):
            raise ValueError(
                f"extent {self.extent_mm} smaller than the blur kernel "
                f"support (needs >= 4 sigma = {tuple(4 * s for s in self.psf_mm)})"
            )

    @classmethod
    def for_scan(cls, geometry: ImageGeometry, scan_length_mm: float,
                 margin_mm: float = 1.5, voxel_mm: float = 0.05,
                 psf_mm: tuple = (0.10, 0.18, 0.30),
                 inclusions: tuple = ()) -> "PhantomSpec":
        """Size a phantom to cover frames of ``geometry`` swept from
        elevational 0 to ``scan_length_mm`` plus in-plane wiggle margin."""
        ex = geometry.n_rows * geometry.pitch_axial_mm + 2 * margin_mm
        ey = geometry.n_cols * geometry.pitch_lateral_mm + 2 * margin_mm
        ez = scan_length_mm + 2 * margin_mm
        origin = (-ex / 2.0, -ey / 2.0, -margin_mm)
        return cls(extent_mm=(ex, ey, ez), voxel_mm=voxel_mm, psf_mm=psf_mm,
                   origin_mm=origin, inclusions=tuple(inclusions))


@dataclass(frozen=True)
class Phantom:
    """Scalar envelope field on a voxel grid; world = origin + index * voxel."""

    field: np.ndarray
    voxel_mm: float
    origin_mm: np.ndarray

    def world_to_voxel(self, points_mm: np.ndarray) -> np.ndarray:
        return (np.asarray(points_mm, dtype=float) - self.origin_mm) / self.voxel_mm


def _amplitude_map(spec: PhantomSpec, dims, origin) -> np.ndarray | None:
    if not spec.inclusions:
        return None
    x = origin[0] + spec.voxel_mm * np.arange(dims[0])
    y = origin[1] + spec.voxel_mm * np.arange(dims[1])
    z = origin[2] + spec.voxel_mm * np.arange(dims[2])
    amp = np.ones(dims)
    for inc in spec.inclusions:
        cx, cy, cz = inc.center_mm
        if inc.kind == "ellipsoid":
            rx, ry, rz = inc.radii_mm
            mask = (
                ((x[:, None, None] - cx) / rx) ** 2
                + ((y[None, :, None] - cy) / ry) ** 2
                + ((z[None, None, :] - cz) / rz) ** 2
            ) <= 1.0
        else:  # tube along the elevational axis
            radius = inc.radii_mm[0]
            mask = (
                (x[:, None, None] - cx) ** 2 + (y[None, :, None] - cy) ** 2
            ) <= radius**2
            mask = np.broadcast_to(mask, dims)
        amp = np.where(mask, inc.amplitude, amp)
    return amp


def make_phantom(spec: PhantomSpec, seed: int) -> Phantom:
    """Fully developed speckle: complex white scatterers blurred by the
    anisotropic kernel, envelope-detected and scaled into [0, 1]."""
    rng = np.random.default_rng(seed)
    dims = tuple(int(np.ceil(e / spec.voxel_mm)) + 1 for e in spec.extent_mm)
    if spec.origin_mm is None:
        origin = np.array([-e / 2.0 for e in spec.extent_mm])
    else:
        origin = np.asarray(spec.origin_mm, dtype=float)

    amp = _amplitude_map(spec, dims, origin)
    sigmas = tuple(s / spec.voxel_mm for s in spec.psf_mm)
    real = rng.standard_normal(dims)
    imag = rng.standard_normal(dims)
    if amp is not None:
        real *= amp
        imag *= amp
    real = gaussian_filter(real, sigmas, mode="constant")
    imag = gaussian_filter(imag, sigmas, mode="constant")
    envelope = np.hypot(real, imag)
    # scale so the speckle mean sits at 0.25; the Rayleigh tail beyond 1
    # is ~1e-6 of voxels and is clipped
    reference = envelope.mean() if amp is None else envelope[amp == 1.0].mean()
    envelope = np.clip(envelope * (0.25 / reference), 0.0, 1.0)
    return Phantom(field=envelope, voxel_mm=spec.voxel_mm, origin_mm=origin)


@dataclass(frozen=True)
class TrajectorySpec:
    """Parametric probe path: monotone elevational progress with an
    optional lateral curve, slow rotation sweep, and per-frame jitter."""

    shape: str = "linear"
    length_mm: float = 10.0
    n_frames: int = 50
    lateral_amplitude_mm: float = 0.0
    rotation_amplitude_deg: float = 0.0
    noise_translation_mm: tuple = (0.0, 0.0, 0.0)
    noise_rotation_deg: tuple = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.shape not in ("linear", "s_curve", "c_curve"):
            raise ValueError(f"unknown trajectory shape {self.shape!r}")
        if self.n_frames < 2:
            raise ValueError("a trajectory needs at least 2 frames")
        if self.length_mm <= 0:
            raise ValueError("scan length must be positive")
        if any(s < 0 for s in self.noise_translation_mm) or any(
            s < 0 for s in self.noise_rotation_deg
        ):
            raise ValueError("noise amplitudes must be nonnegative")


def make_trajectory(spec: TrajectorySpec):
    """Build (Trajectory, relative PoseVectors) from a spec.

    Elevational jitter is clipped to +-0.45 of the mean step so progress
    stays strictly monotone.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_frames
    u = np.linspace(0.0, 1.0, n)
    step = spec.length_mm / (n - 1)

    noise_t = rng.standard_normal((n, 3)) * np.asarray(spec.noise_translation_mm)
    noise_r = rng.standard_normal((n, 3)) * np.asarray(spec.noise_rotation_deg)
    noise_t[:, 2] = np.clip(noise_t[:, 2], -0.45 * step, 0.45 * step)

    tz = spec.length_mm * u + noise_t[:, 2]
    if spec.shape == "s_curve":
        ty = spec.lateral_amplitude_mm * np.sin(2.0 * np.pi * u)
    elif spec.shape == "c_curve":
        ty = spec.lateral_amplitude_mm * np.sin(np.pi * u)
    else:
        ty = np.zeros(n)
    ty = ty + noise_t[:, 1]
    tx = noise_t[:, 0]

    phases = np.array([0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0])
    rot = spec.rotation_amplitude_deg * np.sin(
        2.0 * np.pi * u[:, None] + phases[None, :]
    )
    rot = rot + noise_r

    raw = [
        pose_to_transform(PoseVector(tx[i], ty[i], tz[i], *rot[i]))
        for i in range(n)
    ]
    inv0 = raw[0].inverse()
    absolute = [TransformSE3.identity()] + [t.compose(inv0) for t in raw[1:]]
    trajectory = Trajectory(tuple(absolute))
    relatives = [transform_to_pose(t) for t in extract_relatives(trajectory)]
    return trajectory, relatives


@dataclass(frozen=True)
class ScanSequence:
    """Frames plus geometry, frame rate and ground truth."""

    frames: np.ndarray
    geometry: ImageGeometry
    frame_rate_hz: float
    truth: Trajectory
    subject: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (n, h, w), got {self.frames.shape}")
        if len(self.truth) != self.frames.shape[0]:
            raise ValueError(
                f"{self.frames.shape[0]} frames but {len(self.truth)} poses"
            )
        if self.frames.shape[1:] != (self.geometry.n_rows, self.geometry.n_cols):
            raise ValueError("frame shape does not match geometry")
        if self.frames.min() < 0.0 or self.frames.max() > 1.0:
            raise ValueError("frame intensities must lie in [0, 1]")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def truth_relative_poses(self) -> list:
        return [transform_to_pose(t) for t in extract_relatives(self.truth)]


def slice_phantom(phantom: Phantom, trajectory: Trajectory,
                  geometry: ImageGeometry) -> np.ndarray:
    """Trilinear samples of the phantom on every transformed frame grid."""
    dims = phantom.field.shape
    pixels = geometry.full_pixel_grid()
    frames = np.empty((len(trajectory), geometry.n_rows, geometry.n_cols))
    for i, transform in enumerate(trajectory):
        world = frame_grid_points(transform, geometry, pixels)
        coords = phantom.world_to_voxel(world)
        if coords.min() < 0.0 or np.any(coords.max(axis=0) > np.array(dims) - 1):
            raise FrameOutOfBoundsError(i)
        sampled = map_coordinates(phantom.field, coords.T, order=1, mode="nearest")
        frames[i] = sampled.reshape(geometry.n_rows, geometry.n_cols)
    return frames


# -- scan container ------------------------------------------------------------

def write_scan(directory, scan: ScanSequence, force: bool = False) -> Path:
    """Write poses.csv + frames.bin + manifest.json into a directory.

    frames.bin layout (all little-endian): magic "FUS1", u32 frame count,
    u32 rows, u32 cols, f32 axial pitch, f32 lateral pitch, f32 frame
    rate, then the frames as row-major f32.
    """
    directory = Path(directory)
    frames_path = directory / "frames.bin"
    if frames_path.exists() and not force:
        raise FileExistsError(f"{frames_path} exists; pass force=True to overwrite")
    directory.mkdir(parents=True, exist_ok=True)
    write_pose_csv(directory / "poses.csv", scan.truth.poses())
    with open(frames_path, "wb") as handle:
        handle.write(FRAMES_MAGIC)
        handle.write(struct.pack("<III", scan.n_frames, scan.geometry.n_rows,
                                 scan.geometry.n_cols))
        handle.write(struct.pack("<fff", scan.geometry.pitch_axial_mm,
                                 scan.geometry.pitch_lateral_mm,
                                 scan.frame_rate_hz))
        handle.write(np.ascontiguousarray(scan.frames, dtype="<f4").tobytes())
    manifest = {"subject": scan.subject, "n_frames": scan.n_frames}
    manifest.update(scan.meta)
    with open(directory / "manifest.json", "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return directory


def read_scan(directory) -> ScanSequence:
    directory = Path(directory)
    with open(directory / "frames.bin", "rb") as handle:
        blob = handle.read()
    if blob[:4] != FRAMES_MAGIC:
        raise ValueError(f"{directory}/frames.bin: bad magic")
    n, rows, cols = struct.unpack_from("<III", blob, 4)
    pitch_a, pitch_l, rate = struct.unpack_from("<fff", blob, 16)
    frames = np.frombuffer(blob, dtype="<f4", count=n * rows * cols, offset=28)
    frames = frames.reshape(n, rows, cols).astype(np.float64)
    poses = read_pose_csv(directory / "poses.csv")
    transforms = [pose_to_transform(p) for p in poses]
    subject = ""
    meta = {}
    manifest_path = directory / "manifest.json"
    if manifest_path.exists():
        with open(manifest_path, "r", encoding="utf-8") as handle:
            meta = json.load(handle)
        subject = meta.pop("subject", "")
        meta.pop("n_frames", None)
    return ScanSequence(
        frames=frames,
        geometry=ImageGeometry(rows, cols, float(pitch_a), float(pitch_l)),
        frame_rate_hz=float(rate),
        truth=Trajectory(tuple(transforms)),
        subject=subject,
        meta=meta,
    )
