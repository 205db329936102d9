"""Grid types, cropping, resampling, undersampling and normalization."""

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from precip_slomo.errors import EmptyCrop, ExtentMismatch, NegativeInput, ShapeMismatch
from precip_slomo.grids import (
    BBox,
    Dem,
    FrameSeries,
    GridMeta,
    PrecipFrame,
    crop_series,
    crop_to_bbox,
    denormalize_precip,
    normalize_precip,
    resample_to,
    terrain_gradient,
    undersample,
)

T0 = datetime(2018, 10, 14, 0, 0, tzinfo=timezone.utc)


def meta_of(rows=4, cols=4, lat_sw=0.0, lon_sw=0.0, cell=1.0):
    return GridMeta(rows=rows, cols=cols, lat_sw=lat_sw, lon_sw=lon_sw, cell_deg=cell)


def frame_of(meta, values, ts=T0, mask=None):
    return PrecipFrame(meta=meta, timestamp=ts, values=values, missing_mask=mask)


def series_of(meta, fields, step=5):
    frames = tuple(
        frame_of(meta, f, ts=T0 + timedelta(minutes=step * k))
        for k, f in enumerate(fields)
    )
    return FrameSeries(frames=frames, step_minutes=step)


class TestGridMeta:
    def test_rejects_degenerate_shapes(self):
        with pytest.raises(ValueError):
            GridMeta(rows=1, cols=4, lat_sw=0.0, lon_sw=0.0, cell_deg=1.0)
        with pytest.raises(ValueError):
            GridMeta(rows=4, cols=1, lat_sw=0.0, lon_sw=0.0, cell_deg=1.0)
        with pytest.raises(ValueError):
            GridMeta(rows=4, cols=4, lat_sw=0.0, lon_sw=0.0, cell_deg=0.0)

    def test_cell_centers(self):
        m = meta_of(rows=2, cols=3, lat_sw=10.0, lon_sw=20.0, cell=0.5)
        assert np.allclose(m.lat_centers(), [10.25, 10.75])
        assert np.allclose(m.lon_centers(), [20.25, 20.75, 21.25])
        ext = m.extent()
        assert (ext.lat_min, ext.lat_max) == (10.0, 11.0)
        assert (ext.lon_min, ext.lon_max) == (20.0, 21.5)

    def test_aligned_tolerance(self):
        a = meta_of()
        b = meta_of(lat_sw=1e-10)
        c = meta_of(lat_sw=1e-6)
        assert a.aligned(b)
        assert not a.aligned(c)
        assert not a.aligned(meta_of(rows=5))


class TestPrecipFrame:
    def test_rejects_negative_and_nonfinite(self):
        m = meta_of(2, 2)
        with pytest.raises(ValueError):
            frame_of(m, [[0.0, 1.0], [0.0, -0.5]])
        with pytest.raises(ValueError):
            frame_of(m, [[0.0, np.nan], [0.0, 0.0]])

    def test_masked_cells_may_hold_anything(self):
        m = meta_of(2, 2)
        mask = np.array([[False, True], [False, False]])
        f = frame_of(m, [[0.0, -9.0], [1.0, 2.0]], mask=mask)
        assert f.valid_mask.sum() == 3

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            frame_of(meta_of(3, 3), np.zeros((2, 2)))


class TestFrameSeries:
    def test_spacing_enforced(self):
        m = meta_of(2, 2)
        a = frame_of(m, np.zeros((2, 2)), ts=T0)
        b = frame_of(m, np.zeros((2, 2)), ts=T0 + timedelta(minutes=7))
        with pytest.raises(ValueError):
            FrameSeries(frames=(a, b), step_minutes=5)

    def test_alignment_enforced(self):
        a = frame_of(meta_of(2, 2), np.zeros((2, 2)), ts=T0)
        b = frame_of(
            meta_of(2, 2, lon_sw=0.5),
            np.zeros((2, 2)),
            ts=T0 + timedelta(minutes=5),
        )
        with pytest.raises(ValueError):
            FrameSeries(frames=(a, b), step_minutes=5)


class TestTerrainGradient:
    def test_flat_dem_zero_gradient(self):
        dem = terrain_gradient(Dem(meta=meta_of(4, 4), elevation=np.full((4, 4), 7.0)))
        assert np.all(dem.grad_x == 0.0)
        assert np.all(dem.grad_y == 0.0)

    def test_planar_dem_exact(self):
        m = meta_of(5, 5)
        yy, xx = np.mgrid[0:5, 0:5]
        dem = terrain_gradient(Dem(meta=m, elevation=2.0 * yy + 3.0 * xx))
        # central differences and one-sided borders are both exact on a plane
        assert np.allclose(dem.grad_x, 3.0, atol=1e-12)
        assert np.allclose(dem.grad_y, 2.0, atol=1e-12)

    def test_rejects_nonfinite(self):
        elev = np.zeros((3, 3))
        elev[1, 1] = np.inf
        with pytest.raises(ValueError):
            terrain_gradient(Dem(meta=meta_of(3, 3), elevation=elev))


class TestCrop:
    def test_box_covering_grid_is_identity(self):
        m = meta_of(10, 10, lat_sw=43.0, lon_sw=2.8, cell=0.05)
        f = frame_of(m, np.arange(100.0).reshape(10, 10))
        out = crop_to_bbox(f, BBox(lat_min=43.0, lon_min=2.8, lat_max=43.5, lon_max=3.3))
        assert out.meta.aligned(m)
        assert np.array_equal(out.values, f.values)

    def test_ne_quadrant(self):
        m = meta_of(4, 4)
        f = frame_of(m, np.arange(16.0).reshape(4, 4))
        out = crop_to_bbox(f, BBox(lat_min=2.0, lon_min=2.0, lat_max=4.0, lon_max=4.0))
        assert (out.meta.rows, out.meta.cols) == (2, 2)
        assert out.meta.lat_sw == pytest.approx(2.0)
        assert out.meta.lon_sw == pytest.approx(2.0)
        assert np.array_equal(out.values, f.values[2:, 2:])

    def test_empty_crop_raises(self):
        f = frame_of(meta_of(4, 4), np.zeros((4, 4)))
        with pytest.raises(EmptyCrop):
            crop_to_bbox(f, BBox(lat_min=50.0, lon_min=50.0, lat_max=51.0, lon_max=51.0))

    def test_nested_crop_equals_direct_crop(self):
        m = meta_of(12, 12, lat_sw=40.0, lon_sw=1.0, cell=0.1)
        rng = np.random.default_rng(3)
        f = frame_of(m, rng.random((12, 12)))
        outer = BBox(lat_min=40.1, lon_min=1.1, lat_max=41.1, lon_max=2.1)
        inner = BBox(lat_min=40.3, lon_min=1.4, lat_max=40.9, lon_max=1.9)
        via_outer = crop_to_bbox(crop_to_bbox(f, outer), inner)
        direct = crop_to_bbox(f, inner)
        assert via_outer.meta.aligned(direct.meta)
        assert np.array_equal(via_outer.values, direct.values)

    def test_dem_crop_recomputes_gradients(self):
        m = meta_of(6, 6)
        yy, xx = np.mgrid[0:6, 0:6]
        dem = terrain_gradient(Dem(meta=m, elevation=1.0 * yy + 4.0 * xx))
        out = crop_to_bbox(dem, BBox(lat_min=1.0, lon_min=1.0, lat_max=5.0, lon_max=5.0))
        assert out.grad_x is not None
        assert np.allclose(out.grad_x, 4.0)
        assert np.allclose(out.grad_y, 1.0)

    def test_crop_series_preserves_step(self):
        m = meta_of(6, 6)
        s = series_of(m, [np.zeros((6, 6))] * 3, step=30)
        out = crop_series(s, BBox(lat_min=1.0, lon_min=1.0, lat_max=5.0, lon_max=5.0))
        assert out.step_minutes == 30
        assert len(out) == 3
        assert out.meta.rows == 4


class TestResample:
    def test_aligned_target_is_passthrough(self):
        m = meta_of(4, 4)
        f = frame_of(m, np.arange(16.0).reshape(4, 4))
        out = resample_to(f, meta_of(4, 4))
        assert np.array_equal(out.values, f.values)

    def test_constant_field_preserved(self):
        src = meta_of(4, 4, cell=1.0)
        target = meta_of(6, 6, lat_sw=0.5, lon_sw=0.5, cell=0.5)
        f = frame_of(src, np.full((4, 4), 5.0))
        out = resample_to(f, target)
        assert np.allclose(out.values, 5.0, atol=1e-12)

    def test_midpoint_between_columns(self):
        src = meta_of(2, 2, cell=1.0)
        f = frame_of(src, np.array([[0.0, 1.0], [0.0, 1.0]]))
        # middle target column center sits exactly between source columns
        target = GridMeta(rows=3, cols=3, lat_sw=0.0, lon_sw=0.0, cell_deg=2.0 / 3.0)
        out = resample_to(f, target)
        assert np.allclose(out.values[:, 1], 0.5, atol=1e-12)

    def test_planar_dem_resample_exact(self):
        src = meta_of(8, 8, cell=1.0)
        yy, xx = np.mgrid[0:8, 0:8]
        dem = Dem(meta=src, elevation=2.0 + 0.5 * yy - 0.25 * xx)
        target = meta_of(12, 12, lat_sw=1.0, lon_sw=1.0, cell=0.5)
        out = resample_to(dem, target)
        lat_t = target.lat_centers()[:, None]
        lon_t = target.lon_centers()[None, :]
        # the plane expressed in geographic coordinates (row = lat - 0.5 etc.)
        expected = 2.0 + 0.5 * (lat_t - 0.5) - 0.25 * (lon_t - 0.5)
        assert np.allclose(out.elevation, expected, atol=1e-9)

    def test_target_outside_extent_raises(self):
        src = meta_of(4, 4)
        f = frame_of(src, np.zeros((4, 4)))
        target = meta_of(4, 4, lon_sw=3.0)
        with pytest.raises(ExtentMismatch):
            resample_to(f, target)

    def test_missing_propagates_to_touched_cells(self):
        src = meta_of(4, 4, cell=1.0)
        mask = np.zeros((4, 4), dtype=bool)
        mask[1, 1] = True
        f = frame_of(src, np.full((4, 4), 2.0), mask=mask)
        target = meta_of(6, 6, lat_sw=0.5, lon_sw=0.5, cell=0.5)
        out = resample_to(f, target)
        assert out.missing_mask.any()
        # cells far from the hole stay valid and exact
        assert not out.missing_mask[-1, -1]
        assert out.values[-1, -1] == pytest.approx(2.0)


class TestUndersample:
    def test_factor_one_identity(self):
        s = series_of(meta_of(2, 2), [np.zeros((2, 2))] * 4, step=5)
        out = undersample(s, 1)
        assert len(out) == 4
        assert out.step_minutes == 5

    def test_five_to_thirty(self):
        s = series_of(meta_of(2, 2), [np.full((2, 2), float(k)) for k in range(13)], step=5)
        out = undersample(s, 6)
        assert len(out) == 3
        assert out.step_minutes == 30
        assert [f.values[0, 0] for f in out.frames] == [0.0, 6.0, 12.0]

    def test_composition(self):
        s = series_of(meta_of(2, 2), [np.full((2, 2), float(k)) for k in range(25)], step=5)
        once = undersample(s, 12)
        twice = undersample(undersample(s, 6), 2)
        assert once.step_minutes == twice.step_minutes == 60
        for a, b in zip(once.frames, twice.frames):
            assert np.array_equal(a.values, b.values)

    def test_too_short_raises(self):
        s = series_of(meta_of(2, 2), [np.zeros((2, 2))] * 3, step=5)
        with pytest.raises(ValueError):
            undersample(s, 6)


class TestNormalization:
    def test_zero_maps_to_zero(self):
        assert normalize_precip(np.array([0.0]))[0] == 0.0

    def test_known_value(self):
        assert normalize_precip(np.array([np.e - 1.0]))[0] == pytest.approx(1.0, abs=1e-12)

    def test_roundtrip(self):
        v = np.array([0.0, 0.1, 1.0, 10.0, 100.0])
        assert np.allclose(denormalize_precip(normalize_precip(v)), v, atol=1e-9)

    def test_monotone(self):
        rng = np.random.default_rng(0)
        v = np.sort(rng.random(64) * 200.0)
        n = normalize_precip(v)
        assert np.all(np.diff(n) >= 0)

    def test_negative_rejected(self):
        with pytest.raises(NegativeInput):
            normalize_precip(np.array([-0.1]))

    def test_frame_masked_cells_ignored(self):
        m = meta_of(2, 2)
        mask = np.array([[False, True], [False, False]])
        f = frame_of(m, [[1.0, -5.0], [0.0, 3.0]], mask=mask)
        n = normalize_precip(f)
        assert n[0, 1] == 0.0
        assert n[1, 1] == pytest.approx(np.log1p(3.0))
