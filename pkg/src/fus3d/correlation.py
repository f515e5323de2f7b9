"""Patch-wise correlation volumes between feature-map pairs.

For every region of interest (RoI) placed on a common grid over both
maps, the center patch of the first map is correlated against every
patch position inside the RoI of the second map, giving a d x d array
per RoI (d = roi_extent - patch_extent + 1). Stacking the arrays over
the RoI grid yields the correlation volume.

Normalization options:

* ``ncc``: patches are zero-meaned and unit-normalized over channels x
  patch area, so values live in [-1, 1] and a stationary pair peaks at
  exactly 1 at the center. Zero-variance patches correlate as 0.
* ``dot``: raw inner products.

The operation is differentiable and registered on the autodiff tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pgm import write_pgm16
from .tensor import Tensor, _node

__all__ = ["CorrConfig", "CorrelationVolume", "correlate", "correlate_batch",
           "mean_map", "write_mean_map_pgm"]


@dataclass(frozen=True)
class CorrConfig:
    """Free parameters of the correlation operation.

    Defaults put an 8x8 RoI grid on a 64x64 map with d = 5. Extents are
    odd so patches and RoIs have centers; the RoI grid is inset so every
    window stays inside the map (no padding).
    """

    roi_extent: int = 9
    patch_extent: int = 5
    roi_stride: int = 7
    normalization: str = "ncc"

    def __post_init__(self) -> None:
        if self.roi_extent % 2 == 0 or self.patch_extent % 2 == 0:
            raise ValueError("roi_extent and patch_extent must be odd")
        if self.patch_extent > self.roi_extent:
            raise ValueError(
                f"patch_extent {self.patch_extent} exceeds roi_extent {self.roi_extent}"
            )
        if self.roi_stride < 1:
            raise ValueError("roi_stride must be positive")
        if self.normalization not in ("ncc", "dot"):
            raise ValueError(f"unknown normalization {self.normalization!r}")

    @property
    def displacement_extent(self) -> int:
        return self.roi_extent - self.patch_extent + 1

    @classmethod
    def for_map_extent(cls, extent: int, grid: int = 8, roi_extent: int = 9,
                       patch_extent: int = 5, normalization: str = "ncc"
                       ) -> "CorrConfig":
        """Pick the stride that fits a grid x grid RoI layout on a map."""
        if grid < 2:
            raise ValueError("grid must be at least 2")
        stride = (extent - roi_extent) // (grid - 1)
        if stride < 1:
            raise ValueError(
                f"map extent {extent} cannot hold a {grid}x{grid} grid of "
                f"{roi_extent}px RoIs"
            )
        return cls(roi_extent, patch_extent, stride, normalization)


def _grid_layout(h: int, w: int, cfg: CorrConfig):
    """RoI counts and inset margins; raises when RoIs do not fit."""
    r, s = cfg.roi_extent, cfg.roi_stride
    if r > h or r > w:
        raise ValueError(f"RoI extent {r} larger than feature map {h}x{w}")
    gy = (h - r) // s + 1
    gx = (w - r) // s + 1
    my = (h - ((gy - 1) * s + r)) // 2
    mx = (w - ((gx - 1) * s + r)) // 2
    return gy, gx, my, mx


# Numerically, a windowed NCC value is computed from per-window sufficient
# statistics (sum, sum of squares, cross sum against the normalized center
# patch); windows of the second map are addressed as strided views of a
# sliding-window view, so nothing near the full window tensor is ever
# materialized. Variances below _VAR_FLOOR (relative) count as degenerate
# and correlate as 0 with zero gradient.
_VAR_FLOOR = 1e-13


def _scatter_patch(grad: np.ndarray, contrib: np.ndarray, y0: int, x0: int,
                   stride: int, g_count: int, p: int) -> None:
    """Add per-window patch gradients (n, c, gy, gx, p, p) onto the map.

    Within one (pi, pj) patch pixel the target positions are stride
    separated, so the strided slice-add is alias free.
    """
    stop_y = y0 + stride * (g_count - 1) + 1
    stop_x = x0 + stride * (g_count - 1) + 1
    for pi in range(p):
        for pj in range(p):
            grad[:, :, y0 + pi : stop_y + pi : stride,
                 x0 + pj : stop_x + pj : stride] += contrib[:, :, :, :, pi, pj]


def correlate_batch(a: Tensor, b: Tensor, cfg: CorrConfig) -> Tensor:
    """Correlation volumes for a batch of map pairs.

    ``a`` and ``b`` are (n, c, h, w); the result is (n, gy, gx, d, d)
    where entry (u, v) correlates the center patch of ``a`` with the
    ``b`` patch whose top-left corner sits at RoI top-left + (u, v).
    """
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"correlate: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 4:
        raise ValueError(f"correlate needs (n, c, h, w) maps, got {a.shape}")
    n, c, h, w = a.shape
    p = cfg.patch_extent
    d = cfg.displacement_extent
    s = cfg.roi_stride
    gy, gx, my, mx = _grid_layout(h, w, cfg)
    k = c * p * p
    center = (cfg.roi_extent - p) // 2
    ncc = cfg.normalization == "ncc"

    b_view = np.lib.stride_tricks.sliding_window_view(b.data, (p, p), axis=(2, 3))
    a_view = np.lib.stride_tricks.sliding_window_view(a.data, (p, p), axis=(2, 3))

    def window(view, oy, ox):
        """Strided (n, c, gy, gx, p, p) view at grid offset (oy, ox)."""
        return view[:, :, oy : oy + s * (gy - 1) + 1 : s,
                    ox : ox + s * (gx - 1) + 1 : s]

    # center windows of `a`, gathered once
    a_win = np.ascontiguousarray(window(a_view, my + center, mx + center))
    if ncc:
        s_a = np.einsum("ncijpq->nij", a_win)
        s_aa = np.einsum("ncijpq,ncijpq->nij", a_win, a_win)
        mu_a = s_a / k
        var_a = np.maximum(s_aa - s_a * mu_a, 0.0)
        good_a = var_a > _VAR_FLOOR * np.maximum(s_aa, 1e-300)
        inv_a = np.where(good_a, 1.0 / np.sqrt(np.where(good_a, var_a, 1.0)), 0.0)
        a_ref = (a_win - mu_a[:, None, :, :, None, None]) * (
            inv_a[:, None, :, :, None, None]
        )
        sum_ref = np.einsum("ncijpq->nij", a_ref)  # ~0, kept for exactness
    else:
        a_ref = a_win

    corr = np.empty((n, gy, gx, d, d))
    if ncc:
        mu_b = np.empty((n, gy, gx, d, d))
        inv_b = np.empty((n, gy, gx, d, d))
    for u in range(d):
        for v in range(d):
            b_w = window(b_view, my + u, mx + v)
            cross = np.einsum("ncijpq,ncijpq->nij", a_ref, b_w)
            if not ncc:
                corr[:, :, :, u, v] = cross
                continue
            s_b = np.einsum("ncijpq->nij", b_w)
            s_bb = np.einsum("ncijpq,ncijpq->nij", b_w, b_w)
            mu = s_b / k
            var = np.maximum(s_bb - s_b * mu, 0.0)
            good = var > _VAR_FLOOR * np.maximum(s_bb, 1e-300)
            inv = np.where(good, 1.0 / np.sqrt(np.where(good, var, 1.0)), 0.0)
            mu_b[:, :, :, u, v] = mu
            inv_b[:, :, :, u, v] = inv
            corr[:, :, :, u, v] = np.clip(inv * (cross - mu * sum_ref), -1.0, 1.0)

    def vjp(g):
        g5 = g.reshape(n, gy, gx, d, d)
        grad_a = np.zeros(a.shape)
        grad_b = np.zeros(b.shape)
        da_acc = np.zeros_like(a_win)
        stop_y = s * (gy - 1) + 1
        stop_x = s * (gx - 1) + 1
        # per (offset, patch pixel): small (n, c, gy, gx) updates on strided
        # slices; within one slice the targets are stride separated
        for u in range(d):
            for v in range(d):
                b_w = window(b_view, my + u, mx + v)
                gv = g5[:, :, :, u, v]
                if ncc:
                    inv = inv_b[:, :, :, u, v]
                    mu = mu_b[:, :, :, u, v]
                    cor = corr[:, :, :, u, v]
                    s1 = (gv * inv)[:, None]
                    s2 = (gv * cor * inv * inv)[:, None]
                    mu_s2 = (mu[:, None] * s2)
                    t1 = (gv * inv * inv_a)[:, None]
                    mu_t1 = mu[:, None] * t1
                    for pi in range(p):
                        for pj in range(p):
                            bw_px = b_w[:, :, :, :, pi, pj]
                            grad_b[:, :, my + u + pi : my + u + pi + stop_y : s,
                                   mx + v + pj : mx + v + pj + stop_x : s] += (
                                a_ref[:, :, :, :, pi, pj] * s1 - bw_px * s2 + mu_s2
                            )
                            da_acc[:, :, :, :, pi, pj] += bw_px * t1 - mu_t1
                else:
                    gve = gv[:, None]
                    for pi in range(p):
                        for pj in range(p):
                            grad_b[:, :, my + u + pi : my + u + pi + stop_y : s,
                                   mx + v + pj : mx + v + pj + stop_x : s] += (
                                a_ref[:, :, :, :, pi, pj] * gve
                            )
                            da_acc[:, :, :, :, pi, pj] += (
                                b_w[:, :, :, :, pi, pj] * gve
                            )
        if ncc:
            # subtract the self term: corr-weighted normalized center patch
            gc_sum = np.einsum("nijuv,nijuv->nij", g5, corr)
            da_acc -= a_ref * (gc_sum * inv_a)[:, None, :, :, None, None]
        _scatter_patch(grad_a, da_acc, my + center, mx + center, s, gy, p)
        return grad_a, grad_b

    return _node(corr, (a, b), vjp)


@dataclass(frozen=True)
class CorrelationVolume:
    """Stacked correlation arrays: values (n_rois, d, d) on a RoI grid."""

    values: Tensor
    grid_shape: tuple

    def __post_init__(self) -> None:
        gy, gx = self.grid_shape
        if self.values.shape[0] != gy * gx:
            raise ValueError(
                f"{self.values.shape[0]} arrays do not tile a {gy}x{gx} grid"
            )

    @property
    def n_rois(self) -> int:
        return self.values.shape[0]

    def as_array(self) -> np.ndarray:
        return self.values.data


def correlate(a: Tensor, b: Tensor, cfg: CorrConfig) -> CorrelationVolume:
    """Correlation volume for one (c, h, w) feature-map pair."""
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(b)
    if a.ndim != 3:
        raise ValueError(f"correlate needs (c, h, w) maps, got {a.shape}")
    from .tensor import reshape

    batched = correlate_batch(reshape(a, (1,) + a.shape),
                              reshape(b, (1,) + b.shape), cfg)
    _, gy, gx, d, _ = batched.shape
    values = reshape(batched, (gy * gx, d, d))
    return CorrelationVolume(values=values, grid_shape=(gy, gx))


def mean_map(volume: CorrelationVolume) -> np.ndarray:
    """Per-RoI mean correlation over the RoI grid (diagnostics)."""
    gy, gx = volume.grid_shape
    return volume.as_array().mean(axis=(1, 2)).reshape(gy, gx)


def write_mean_map_pgm(path, volume: CorrelationVolume) -> None:
    write_pgm16(path, mean_map(volume), lo=-1.0, hi=1.0)
