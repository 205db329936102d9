"""Metrics and figure/CSV emission."""

import csv
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from precip_slomo.errors import EmptyWindow, TimestampMismatch
from precip_slomo.evaluation import (
    ResultsBundle,
    emit_figures,
    group_offsets_symmetric,
    mae_by_offset,
    normalize_series,
    rmse_series,
    window_aggregate,
)
from precip_slomo.floodsim import FloodState
from precip_slomo.grids import BBox, FrameSeries, GridMeta, PrecipFrame

T0 = datetime(2018, 10, 14, 0, 0, tzinfo=timezone.utc)
META = GridMeta(rows=4, cols=4, lat_sw=43.0, lon_sw=2.8, cell_deg=0.1)


def series_of(fields, step=5, meta=META, masks=None):
    frames = []
    for k, f in enumerate(fields):
        mask = None if masks is None else masks[k]
        frames.append(
            PrecipFrame(
                meta=meta,
                timestamp=T0 + timedelta(minutes=step * k),
                values=f,
                missing_mask=mask,
            )
        )
    return FrameSeries(frames=tuple(frames), step_minutes=step)


class TestMaeByOffset:
    def test_constant_bias(self):
        n = 13  # one 30-min interval at 5-min cadence, plus endpoints
        truth = series_of([np.zeros((4, 4))] * n)
        pred = series_of([np.full((4, 4), 2.0)] * n)
        mae = mae_by_offset(truth, pred, 30)
        assert sorted(mae) == [5, 10, 15, 20, 25]
        assert all(v == pytest.approx(2.0) for v in mae.values())

    def test_offset_zero_excluded(self):
        truth = series_of([np.zeros((4, 4))] * 7)
        fields = [np.full((4, 4), float(k)) for k in range(7)]
        pred = series_of(fields)
        mae = mae_by_offset(truth, pred, 30)
        assert 0 not in mae
        assert mae[5] == pytest.approx((1.0 + 0.0) / 1)  # only frame k=1

    def test_missing_cells_excluded(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[0, 0] = True
        masks = [mask.copy() for _ in range(3)]
        truth = series_of([np.zeros((4, 4))] * 3, masks=masks)
        bad = [np.zeros((4, 4)) for _ in range(3)]
        for b in bad:
            b[0, 0] = 1e9  # hidden behind the mask
            b[1, 1] = 3.0
        pred = series_of(bad)
        mae = mae_by_offset(truth, pred, 10)
        assert mae[5] == pytest.approx(3.0 / 15.0)

    def test_region_restriction(self):
        truth = series_of([np.zeros((4, 4))] * 3)
        fields = []
        for _ in range(3):
            f = np.zeros((4, 4))
            f[3, 3] = 8.0  # northeast corner only
            fields.append(f)
        pred = series_of(fields)
        sw = BBox(lat_min=43.0, lon_min=2.8, lat_max=43.2, lon_max=3.0)
        mae_sw = mae_by_offset(truth, pred, 10, region=sw)
        mae_all = mae_by_offset(truth, pred, 10)
        assert mae_sw[5] == 0.0
        assert mae_all[5] > 0.0

    def test_length_mismatch(self):
        a = series_of([np.zeros((4, 4))] * 3)
        b = series_of([np.zeros((4, 4))] * 4)
        with pytest.raises(TimestampMismatch):
            mae_by_offset(a, b, 30)

    def test_timestamp_mismatch(self):
        a = series_of([np.zeros((4, 4))] * 3)
        frames = tuple(
            PrecipFrame(
                meta=META,
                timestamp=T0 + timedelta(minutes=5 * k, seconds=30),
                values=np.zeros((4, 4)),
            )
            for k in range(3)
        )
        b = FrameSeries(frames=frames, step_minutes=5)
        with pytest.raises(TimestampMismatch):
            mae_by_offset(a, b, 30)


class TestGrouping:
    def test_symmetric_pairs(self):
        mae = {5: 1.0, 10: 2.0, 15: 3.0, 20: 4.0, 25: 5.0}
        grouped = group_offsets_symmetric(mae, 30)
        assert grouped[(5, 25)] == pytest.approx(3.0)
        assert grouped[(10, 20)] == pytest.approx(3.0)
        assert grouped[(15, 15)] == pytest.approx(3.0)

    def test_lone_offset_kept(self):
        grouped = group_offsets_symmetric({5: 2.0}, 30)
        assert grouped == {(5, 25): 2.0}


class TestRmse:
    def test_hand_computed(self):
        a = series_of([np.array([[3.0, 4.0], [3.0, 4.0]])], meta=GridMeta(
            rows=2, cols=2, lat_sw=0.0, lon_sw=0.0, cell_deg=1.0
        ))
        b = series_of([np.zeros((2, 2))], meta=GridMeta(
            rows=2, cols=2, lat_sw=0.0, lon_sw=0.0, cell_deg=1.0
        ))
        got = rmse_series(a, b)
        assert got == [pytest.approx(np.sqrt(12.5))]

    def test_flood_state_lists(self):
        m = GridMeta(rows=2, cols=2, lat_sw=0.0, lon_sw=0.0, cell_deg=1.0)
        a = [FloodState(meta=m, depth=np.full((2, 2), 1.0), time=T0)]
        b = [FloodState(meta=m, depth=np.full((2, 2), 3.0), time=T0)]
        assert rmse_series(a, b) == [pytest.approx(2.0)]

    def test_identical_series_zero(self):
        rng = np.random.default_rng(0)
        fields = [rng.random((4, 4)) for _ in range(3)]
        a = series_of(fields)
        b = series_of([f.copy() for f in fields])
        assert rmse_series(a, b) == [0.0, 0.0, 0.0]

    def test_timestamp_mismatch(self):
        a = series_of([np.zeros((4, 4))] * 2)
        b = series_of([np.zeros((4, 4))] * 2, step=10)
        with pytest.raises(TimestampMismatch):
            rmse_series(a, b)


class TestNormalizeSeries:
    def test_peak_becomes_one(self):
        out, degenerate = normalize_series([1.0, 4.0, 2.0])
        assert out == [0.25, 1.0, 0.5]
        assert not degenerate

    def test_all_zero_flagged(self):
        out, degenerate = normalize_series([0.0, 0.0])
        assert out == [0.0, 0.0]
        assert degenerate


class TestWindowAggregate:
    def test_inclusive_windows(self):
        series = [1.0, 2.0, 3.0, 4.0, 5.0]
        got = window_aggregate(series, [(0, 1), (2, 4), (3, 3)])
        assert got == [pytest.approx(1.5), pytest.approx(4.0), pytest.approx(4.0)]

    def test_out_of_range_window(self):
        with pytest.raises(EmptyWindow):
            window_aggregate([1.0, 2.0], [(0, 2)])
        with pytest.raises(EmptyWindow):
            window_aggregate([1.0, 2.0], [(1, 0)])


class TestEmitFigures:
    def bundle(self):
        rng = np.random.default_rng(0)
        ext_a = rng.random((6, 6)) > 0.5
        ext_b = rng.random((6, 6)) > 0.5
        return ResultsBundle(
            mae={
                "linear": {5: 1.0, 15: 2.0, 25: 1.1},
                "model": {5: 0.9, 15: 1.4, 25: 1.0},
            },
            coarse_step_minutes=30,
            rmse_precip_norm=[0.1, 1.0, 0.2],
            rmse_depth_norm=[0.0, 0.5, 0.9],
            extent_a=ext_a,
            extent_b=ext_b,
        )

    def test_all_artifacts_written(self, tmp_path):
        written = emit_figures(self.bundle(), tmp_path)
        names = sorted(p.name for p in written)
        assert names == [
            "extent_diff.csv",
            "extent_diff.png",
            "mae_by_offset.csv",
            "mae_by_offset.png",
            "mae_by_offset_grouped.csv",
            "rmse_norm.csv",
            "rmse_norm.png",
        ]
        assert all(p.stat().st_size > 0 for p in written)

    def test_csv_holds_plotted_numbers(self, tmp_path):
        emit_figures(self.bundle(), tmp_path)
        with open(tmp_path / "mae_by_offset.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        got = {
            (r["method"], int(r["offset_minutes"])): float(r["mae"]) for r in rows
        }
        assert got[("linear", 15)] == 2.0
        assert got[("model", 5)] == 0.9
        with open(tmp_path / "rmse_norm.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [float(r["precip_rmse_norm"]) for r in rows] == [0.1, 1.0, 0.2]

    def test_diff_csv_matches_extents(self, tmp_path):
        b = self.bundle()
        emit_figures(b, tmp_path)
        with open(tmp_path / "extent_diff.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 36
        for r in rows[:12]:
            y, x = int(r["row"]), int(r["col"])
            a_flood = bool(b.extent_a[y, x])
            b_flood = bool(b.extent_b[y, x])
            code = int(r["code"])
            if a_flood == b_flood:
                assert code == 0
            elif a_flood:
                assert code == 1
            else:
                assert code == 2

    def test_deterministic_csv_bytes(self, tmp_path):
        d1 = tmp_path / "a"
        d2 = tmp_path / "b"
        emit_figures(self.bundle(), d1)
        emit_figures(self.bundle(), d2)
        for name in ("mae_by_offset.csv", "mae_by_offset_grouped.csv", "rmse_norm.csv"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_empty_bundle_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_figures(ResultsBundle(), tmp_path)
