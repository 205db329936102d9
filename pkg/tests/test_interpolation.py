"""Linear baseline and series densification."""

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from precip_slomo.errors import IncompatibleSteps, ShapeMismatch, TOutOfRange
from precip_slomo.flownet import UNetSpec, init_params
from precip_slomo.grids import (
    Dem,
    FrameSeries,
    GridMeta,
    PrecipFrame,
    terrain_gradient,
    undersample,
)
from precip_slomo.interpolation import densify_series, linear_interpolate
from precip_slomo.synth import linear_ramp

T0 = datetime(2018, 10, 14, 0, 0, tzinfo=timezone.utc)
META = GridMeta(rows=8, cols=8, lat_sw=43.0, lon_sw=2.8, cell_deg=0.01)


def frame_of(values, ts=T0, mask=None, meta=META):
    return PrecipFrame(meta=meta, timestamp=ts, values=values, missing_mask=mask)


def series_of(fields, step):
    frames = tuple(
        frame_of(f, ts=T0 + timedelta(minutes=step * k)) for k, f in enumerate(fields)
    )
    return FrameSeries(frames=frames, step_minutes=step)


class TestLinearInterpolate:
    def test_endpoints(self):
        a = frame_of(np.full((8, 8), 2.0))
        b = frame_of(np.full((8, 8), 6.0), ts=T0 + timedelta(minutes=30))
        assert np.allclose(linear_interpolate(a, b, 0.0).values, 2.0)
        assert np.allclose(linear_interpolate(a, b, 1.0).values, 6.0)

    def test_midpoint_and_timestamp(self):
        a = frame_of(np.full((8, 8), 2.0))
        b = frame_of(np.full((8, 8), 6.0), ts=T0 + timedelta(minutes=30))
        mid = linear_interpolate(a, b, 0.5)
        assert np.allclose(mid.values, 4.0, atol=1e-12)
        assert mid.timestamp == T0 + timedelta(minutes=15)

    def test_missing_union(self):
        mask_a = np.zeros((8, 8), dtype=bool)
        mask_a[0, 0] = True
        mask_b = np.zeros((8, 8), dtype=bool)
        mask_b[1, 1] = True
        a = frame_of(np.ones((8, 8)), mask=mask_a)
        b = frame_of(np.ones((8, 8)), ts=T0 + timedelta(minutes=30), mask=mask_b)
        out = linear_interpolate(a, b, 0.5)
        assert out.missing_mask[0, 0] and out.missing_mask[1, 1]
        assert out.missing_mask.sum() == 2

    def test_t_out_of_range(self):
        a = frame_of(np.zeros((8, 8)))
        b = frame_of(np.zeros((8, 8)), ts=T0 + timedelta(minutes=30))
        for t in (-0.1, 1.1):
            with pytest.raises(TOutOfRange):
                linear_interpolate(a, b, t)

    def test_misaligned_inputs(self):
        other = GridMeta(rows=8, cols=8, lat_sw=0.0, lon_sw=0.0, cell_deg=0.01)
        a = frame_of(np.zeros((8, 8)))
        b = frame_of(np.zeros((8, 8)), ts=T0 + timedelta(minutes=30), meta=other)
        with pytest.raises(ShapeMismatch):
            linear_interpolate(a, b, 0.5)


class TestDensify:
    def test_counts_30_to_5(self):
        s = series_of([np.full((8, 8), float(k)) for k in range(3)], step=30)
        out = densify_series(s, 5)
        assert len(out) == 13
        assert out.step_minutes == 5

    def test_counts_60_to_5(self):
        s = series_of([np.zeros((8, 8)), np.ones((8, 8))], step=60)
        out = densify_series(s, 5)
        assert len(out) == 13

    def test_originals_pass_through_unmodified(self):
        s = series_of([np.full((8, 8), float(3 * k)) for k in range(3)], step=30)
        out = densify_series(s, 5)
        for k, orig in enumerate(s.frames):
            assert np.array_equal(out.frames[6 * k].values, orig.values)
            assert out.frames[6 * k].timestamp == orig.timestamp

    def test_target_equal_to_source_is_identity(self):
        s = series_of([np.zeros((8, 8))] * 3, step=30)
        out = densify_series(s, 30)
        assert len(out) == 3

    def test_incompatible_steps(self):
        s = series_of([np.zeros((8, 8))] * 3, step=30)
        with pytest.raises(IncompatibleSteps):
            densify_series(s, 7)
        with pytest.raises(IncompatibleSteps):
            densify_series(s, 0)

    def test_linear_exact_on_linear_series(self):
        truth, _ = linear_ramp(seed=0, hours=2.0, size=16)
        coarse = undersample(truth, 6)
        dense = densify_series(coarse, 5)
        assert len(dense) == len(truth)
        for a, b in zip(truth.frames, dense.frames):
            assert a.timestamp == b.timestamp
            assert np.allclose(a.values, b.values, atol=1e-9)

    def test_model_method_requires_params_and_dem(self):
        s = series_of([np.zeros((8, 8))] * 3, step=30)
        with pytest.raises(ValueError):
            densify_series(s, 5, method="model")

    def test_unknown_method(self):
        s = series_of([np.zeros((8, 8))] * 3, step=30)
        with pytest.raises(ValueError):
            densify_series(s, 5, method="cubic")

    def test_model_method_runs_with_fresh_params(self):
        s = series_of([np.full((8, 8), 1.0), np.full((8, 8), 3.0)], step=30)
        params = init_params(flow_spec=UNetSpec(levels=2, channels_per_level=(4, 8)))
        dem = terrain_gradient(Dem(meta=META, elevation=np.zeros((8, 8))))
        out = densify_series(s, 15, method="model", params=params, dem=dem)
        assert len(out) == 3
        # fresh zero-initialized nets interpolate at the log-space midpoint
        expected = np.expm1(0.5 * (np.log1p(1.0) + np.log1p(3.0)))
        assert np.allclose(out.frames[1].values, expected, atol=1e-5)
