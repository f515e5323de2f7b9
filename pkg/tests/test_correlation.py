"""Correlation-volume tests against an explicit per-patch oracle."""

import numpy as np
import pytest

from gradcheck import check_gradients

from fus3d.correlation import (
    CorrConfig,
    CorrelationVolume,
    correlate,
    correlate_batch,
    mean_map,
    write_mean_map_pgm,
)
from fus3d.pgm import read_pgm16
from fus3d.tensor import Tensor


def brute_force_volume(a, b, cfg):
    """Independent oracle: explicit loops over RoIs, offsets and patches."""
    c, h, w = a.shape
    r, p, s = cfg.roi_extent, cfg.patch_extent, cfg.roi_stride
    d = r - p + 1
    gy = (h - r) // s + 1
    gx = (w - r) // s + 1
    my = (h - ((gy - 1) * s + r)) // 2
    mx = (w - ((gx - 1) * s + r)) // 2
    center = (r - p) // 2
    out = np.zeros((gy, gx, d, d))
    for i in range(gy):
        for j in range(gx):
            ty, tx = my + i * s, mx + j * s
            ref = a[:, ty + center : ty + center + p, tx + center : tx + center + p]
            for u in range(d):
                for v in range(d):
                    mov = b[:, ty + u : ty + u + p, tx + v : tx + v + p]
                    if cfg.normalization == "dot":
                        out[i, j, u, v] = float((ref * mov).sum())
                    else:
                        rc = ref - ref.mean()
                        mc = mov - mov.mean()
                        nr = np.sqrt((rc * rc).sum())
                        nm = np.sqrt((mc * mc).sum())
                        if nr == 0.0 or nm == 0.0:
                            out[i, j, u, v] = 0.0
                        else:
                            out[i, j, u, v] = float((rc * mc).sum() / (nr * nm))
    return out.reshape(gy * gx, d, d)


SMALL = CorrConfig(roi_extent=7, patch_extent=3, roi_stride=3)


class TestConfig:
    def test_rejects_even_extents(self):
        with pytest.raises(ValueError):
            CorrConfig(roi_extent=8, patch_extent=5, roi_stride=1)
        with pytest.raises(ValueError):
            CorrConfig(roi_extent=9, patch_extent=4, roi_stride=1)

    def test_rejects_patch_larger_than_roi(self):
        with pytest.raises(ValueError):
            CorrConfig(roi_extent=5, patch_extent=7, roi_stride=1)

    def test_default_grid_is_8x8_on_64px_maps(self):
        cfg = CorrConfig()
        vol = correlate(np.zeros((1, 64, 64)), np.zeros((1, 64, 64)), cfg)
        assert vol.grid_shape == (8, 8)
        assert vol.n_rois == 64
        assert cfg.displacement_extent == 5

    def test_for_map_extent(self):
        assert CorrConfig.for_map_extent(64).roi_stride == 7
        assert CorrConfig.for_map_extent(32).roi_stride == 3
        assert CorrConfig.for_map_extent(128).roi_stride == 17

    def test_roi_larger_than_map_rejected(self):
        with pytest.raises(ValueError, match="larger than feature map"):
            correlate(np.zeros((1, 5, 5)), np.zeros((1, 5, 5)), SMALL)


class TestAgainstOracle:
    @pytest.mark.parametrize("normalization", ["ncc", "dot"])
    def test_random_instances_match_brute_force(self, normalization):
        rng = np.random.default_rng(13)
        cfg = CorrConfig(7, 3, 3, normalization)
        for _ in range(4):
            a = rng.standard_normal((2, 14, 16))
            b = rng.standard_normal((2, 14, 16))
            got = correlate(a, b, cfg).as_array()
            np.testing.assert_allclose(got, brute_force_volume(a, b, cfg), atol=1e-12)

    def test_batch_equals_per_pair(self):
        rng = np.random.default_rng(17)
        a = rng.standard_normal((3, 2, 14, 14))
        b = rng.standard_normal((3, 2, 14, 14))
        batch = correlate_batch(Tensor(a), Tensor(b), SMALL).data
        for n in range(3):
            single = correlate(a[n], b[n], SMALL).as_array()
            gy, gx, d, _ = batch.shape[1:]
            np.testing.assert_array_equal(batch[n].reshape(gy * gx, d, d), single)


class TestSelfCorrelation:
    def test_center_peak_is_one(self):
        rng = np.random.default_rng(19)
        a = rng.standard_normal((2, 16, 16))
        vol = correlate(a, a, SMALL).as_array()
        d = SMALL.displacement_extent
        center = (d - 1) // 2
        np.testing.assert_allclose(vol[:, center, center], 1.0, atol=1e-9)
        for arr in vol:
            assert np.unravel_index(arr.argmax(), arr.shape) == (center, center)

    def test_constant_maps_yield_zero(self):
        a = np.ones((1, 16, 16))
        vol = correlate(a, a, SMALL).as_array()
        np.testing.assert_array_equal(vol, 0.0)


class TestShiftEquivariance:
    @pytest.mark.parametrize("extent", [14, 15, 16])
    @pytest.mark.parametrize("shift", [-2, -1, 1, 2])
    @pytest.mark.parametrize("axis", [1, 2])
    def test_integer_shift_moves_every_argmax(self, extent, shift, axis):
        rng = np.random.default_rng(100 * extent + 10 * axis + shift)
        a = rng.standard_normal((2, extent, extent))
        b = np.zeros_like(a)
        src = [slice(None)] * 3
        dst = [slice(None)] * 3
        if shift > 0:
            dst[axis] = slice(shift, None)
            src[axis] = slice(None, -shift)
        else:
            dst[axis] = slice(None, shift)
            src[axis] = slice(-shift, None)
        b[tuple(dst)] = a[tuple(src)]

        vol = correlate(a, b, SMALL)
        arrays = vol.as_array()
        oracle = brute_force_volume(a, b, SMALL)
        np.testing.assert_allclose(arrays, oracle, atol=1e-12)

        d = SMALL.displacement_extent
        center = (d - 1) // 2
        expected = [center, center]
        expected[axis - 1] += shift
        for arr in arrays:
            assert np.unravel_index(arr.argmax(), arr.shape) == tuple(expected)


class TestStatistics:
    def test_ncc_bounded(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            a = rng.standard_normal((1, 14, 14))
            b = rng.standard_normal((1, 14, 14))
            vol = correlate(a, b, SMALL).as_array()
            assert vol.max() <= 1.0 + 1e-12 and vol.min() >= -1.0 - 1e-12

    def test_independent_noise_is_weakly_correlated(self):
        rng = np.random.default_rng(29)
        cfg = CorrConfig(roi_extent=9, patch_extent=5, roi_stride=5)
        values = []
        while len(values) < 64:
            a = rng.standard_normal((1, 24, 24))
            b = rng.standard_normal((1, 24, 24))
            values.extend(np.abs(correlate(a, b, cfg).as_array()).ravel())
        assert np.mean(values) < 0.2


class TestGradients:
    @pytest.mark.parametrize("normalization", ["ncc", "dot"])
    def test_finite_difference(self, normalization):
        rng = np.random.default_rng(31)
        cfg = CorrConfig(7, 3, 2, normalization)
        arrays = [rng.uniform(-1, 1, (1, 2, 10, 10)),
                  rng.uniform(-1, 1, (1, 2, 10, 10))]
        check_gradients(lambda t: correlate_batch(t[0], t[1], cfg), arrays)


class TestMeanMap:
    def test_identical_inputs_give_constant_map(self):
        # content periodic with the RoI stride: every RoI sees the same
        # patch, so the stationary-pair map is exactly constant
        rng = np.random.default_rng(37)
        tile = rng.standard_normal((2, SMALL.roi_stride, SMALL.roi_stride))
        a = np.tile(tile, (1, 6, 6))[:, :16, :16]
        vol = correlate(a, a, SMALL)
        grid = mean_map(vol)
        assert grid.shape == vol.grid_shape
        np.testing.assert_allclose(grid, grid.flat[0], atol=1e-12)

    def test_decorrelated_inputs_near_zero(self):
        rng = np.random.default_rng(41)
        a = rng.standard_normal((2, 20, 20))
        b = rng.standard_normal((2, 20, 20))
        grid = mean_map(correlate(a, b, SMALL))
        assert np.abs(grid).max() < 0.25

    def test_pgm_value_mapping(self, tmp_path):
        from fus3d.pgm import write_pgm16

        path = tmp_path / "ramp.pgm"
        write_pgm16(path, np.array([[-1.0, 0.0, 1.0], [-2.0, 2.0, 0.0]]))
        img = read_pgm16(path)
        # [-1, 1] maps affinely onto [0, 65535]; outside values clip
        np.testing.assert_array_equal(img, [[0, 32768, 65535], [0, 65535, 32768]])

    def test_pgm_export_shape(self, tmp_path):
        rng = np.random.default_rng(43)
        a = rng.standard_normal((1, 16, 16))
        vol = correlate(a, a, SMALL)
        path = tmp_path / "map.pgm"
        write_mean_map_pgm(path, vol)
        img = read_pgm16(path)
        assert img.shape == vol.grid_shape
        expected = np.round(np.clip((mean_map(vol) + 1.0) / 2.0, 0, 1) * 65535)
        np.testing.assert_array_equal(img, expected.astype(np.uint16))


class TestVolumeType:
    def test_grid_consistency_enforced(self):
        with pytest.raises(ValueError):
            CorrelationVolume(values=Tensor(np.zeros((5, 3, 3))), grid_shape=(2, 2))
