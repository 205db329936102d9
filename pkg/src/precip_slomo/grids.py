"""Georeferenced grid types and the raster operations shared by the pipeline.

Conventions
- Grids are cell-center registered: ``lat_sw``/``lon_sw`` are the coordinates
  of the grid's southwest *corner*, and the center of cell ``(r, c)`` sits at
  ``lat_sw + (r + 0.5) * cell_deg`` / ``lon_sw + (c + 0.5) * cell_deg``.
- Row index increases northward, column index increases eastward.
- Rain rates are mm/hr; elevation is meters; gradients are meters per cell.
- Uniform lat/lon cell size, no projection math.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from typing import Sequence, Union

import numpy as np

from .errors import EmptyCrop, ExtentMismatch, NegativeInput, ShapeMismatch

ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class BBox:
    """Geographic bounding box in degrees."""

    lat_min: float
    lon_min: float
    lat_max: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError("BBox requires lat_min < lat_max and lon_min < lon_max")


@dataclass(frozen=True)
class GridMeta:
    """Shape and georeference of a raster grid."""

    rows: int
    cols: int
    lat_sw: float
    lon_sw: float
    cell_deg: float
    crs_note: str = "WGS84 geographic, cell-center registered"

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("grid needs rows >= 2 and cols >= 2")
        if self.cell_deg <= 0:
            raise ValueError("cell_deg must be positive")

    def aligned(self, other: "GridMeta") -> bool:
        """True iff the five numeric fields agree to within 1e-9."""
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and abs(self.lat_sw - other.lat_sw) <= ALIGN_TOL
            and abs(self.lon_sw - other.lon_sw) <= ALIGN_TOL
            and abs(self.cell_deg - other.cell_deg) <= ALIGN_TOL
        )

    def lat_centers(self) -> np.ndarray:
        return self.lat_sw + (np.arange(self.rows) + 0.5) * self.cell_deg

    def lon_centers(self) -> np.ndarray:
        return self.lon_sw + (np.arange(self.cols) + 0.5) * self.cell_deg

    def extent(self) -> BBox:
        """Outer (corner-to-corner) extent of the grid."""
        return BBox(
            lat_min=self.lat_sw,
            lon_min=self.lon_sw,
            lat_max=self.lat_sw + self.rows * self.cell_deg,
            lon_max=self.lon_sw + self.cols * self.cell_deg,
        )


@dataclass(frozen=True)
class PrecipFrame:
    """A georeferenced rain-rate snapshot (mm/hr) at one instant."""

    meta: GridMeta
    timestamp: datetime
    values: np.ndarray
    missing_mask: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.meta.rows, self.meta.cols):
            raise ShapeMismatch(
                f"values shape {values.shape} != grid {(self.meta.rows, self.meta.cols)}"
            )
        if self.missing_mask is None:
            mask = np.zeros(values.shape, dtype=bool)
        else:
            mask = np.asarray(self.missing_mask, dtype=bool)
            if mask.shape != values.shape:
                raise ShapeMismatch("missing_mask shape does not match values")
        valid = values[~mask]
        if valid.size and not np.all(np.isfinite(valid)):
            raise ValueError("non-missing cells must be finite")
        if valid.size and np.any(valid < 0):
            raise ValueError("non-missing rain rates must be >= 0")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing_mask", mask)

    @property
    def valid_mask(self) -> np.ndarray:
        return ~self.missing_mask


@dataclass(frozen=True)
class FrameSeries:
    """Equally spaced, mutually aligned precipitation frames."""

    frames: tuple
    step_minutes: int

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("series must contain at least one frame")
        if self.step_minutes <= 0:
            raise ValueError("step_minutes must be positive")
        step = timedelta(minutes=self.step_minutes)
        for a, b in zip(frames, frames[1:]):
            if b.timestamp - a.timestamp != step:
                raise ValueError("frames must be spaced exactly step_minutes apart")
            if not a.meta.aligned(b.meta):
                raise ValueError("frames must be mutually aligned")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def meta(self) -> GridMeta:
        return self.frames[0].meta


@dataclass(frozen=True)
class Dem:
    """Elevation grid (m) with optional cached central-difference gradients."""

    meta: GridMeta
    elevation: np.ndarray
    grad_x: np.ndarray = None  # type: ignore[assignment]
    grad_y: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        elev = np.asarray(self.elevation, dtype=np.float64)
        if elev.shape != (self.meta.rows, self.meta.cols):
            raise ShapeMismatch(
                f"elevation shape {elev.shape} != grid {(self.meta.rows, self.meta.cols)}"
            )
        object.__setattr__(self, "elevation", elev)
        for name in ("grad_x", "grad_y"):
            g = getattr(self, name)
            if g is not None:
                g = np.asarray(g, dtype=np.float64)
                if g.shape != elev.shape:
                    raise ShapeMismatch(f"{name} shape does not match elevation")
                object.__setattr__(self, name, g)


Grid = Union[PrecipFrame, Dem]


def _directional_diff(h: np.ndarray, axis: int) -> np.ndarray:
    """Central differences along ``axis``, one-sided at the borders."""
    out = np.empty_like(h, dtype=np.float64)
    inner = [slice(None)] * h.ndim
    lo = [slice(None)] * h.ndim
    hi = [slice(None)] * h.ndim
    inner[axis] = slice(1, -1)
    lo[axis] = slice(2, None)
    hi[axis] = slice(None, -2)
    out[tuple(inner)] = (h[tuple(lo)] - h[tuple(hi)]) / 2.0
    first = [slice(None)] * h.ndim
    first[axis] = 0
    second = [slice(None)] * h.ndim
    second[axis] = 1
    out[tuple(first)] = h[tuple(second)] - h[tuple(first)]
    last = [slice(None)] * h.ndim
    last[axis] = -1
    penult = [slice(None)] * h.ndim
    penult[axis] = -2
    out[tuple(last)] = h[tuple(last)] - h[tuple(penult)]
    return out


def terrain_gradient(dem: Dem) -> Dem:
    """Return a copy of ``dem`` with grad_x (along columns) and grad_y (along rows)."""
    if not np.all(np.isfinite(dem.elevation)):
        raise ValueError("elevation must not contain NaN/Inf")
    gx = _directional_diff(dem.elevation, axis=1)
    gy = _directional_diff(dem.elevation, axis=0)
    return replace(dem, grad_x=gx, grad_y=gy)


def _crop_slices(meta: GridMeta, box: BBox) -> tuple:
    lats = meta.lat_centers()
    lons = meta.lon_centers()
    rows_in = np.nonzero((lats >= box.lat_min) & (lats <= box.lat_max))[0]
    cols_in = np.nonzero((lons >= box.lon_min) & (lons <= box.lon_max))[0]
    if rows_in.size == 0 or cols_in.size == 0:
        raise EmptyCrop("no cell center falls inside the bounding box")
    r0, r1 = int(rows_in[0]), int(rows_in[-1]) + 1
    c0, c1 = int(cols_in[0]), int(cols_in[-1]) + 1
    new_meta = replace(
        meta,
        rows=r1 - r0,
        cols=c1 - c0,
        lat_sw=meta.lat_sw + r0 * meta.cell_deg,
        lon_sw=meta.lon_sw + c0 * meta.cell_deg,
    )
    return new_meta, slice(r0, r1), slice(c0, c1)


def crop_to_bbox(grid: Grid, box: BBox) -> Grid:
    """Sub-grid of all cells whose centers fall inside ``box``."""
    new_meta, rs, cs = _crop_slices(grid.meta, box)
    if isinstance(grid, PrecipFrame):
        return PrecipFrame(
            meta=new_meta,
            timestamp=grid.timestamp,
            values=grid.values[rs, cs].copy(),
            missing_mask=grid.missing_mask[rs, cs].copy(),
        )
    if isinstance(grid, Dem):
        cropped = Dem(meta=new_meta, elevation=grid.elevation[rs, cs].copy())
        # Cached gradients are not slice-stable at the new borders; recompute.
        if grid.grad_x is not None or grid.grad_y is not None:
            cropped = terrain_gradient(cropped)
        return cropped
    raise TypeError(f"cannot crop object of type {type(grid).__name__}")


def crop_series(series: FrameSeries, box: BBox) -> FrameSeries:
    return FrameSeries(
        frames=tuple(crop_to_bbox(f, box) for f in series.frames),
        step_minutes=series.step_minutes,
    )


def _bilinear_sample(values: np.ndarray, fy: np.ndarray, fx: np.ndarray) -> np.ndarray:
    """Sample ``values`` at fractional (row, col) index grids, clamped to border."""
    rows, cols = values.shape
    fy = np.clip(fy, 0.0, rows - 1.0)
    fx = np.clip(fx, 0.0, cols - 1.0)
    y0 = np.clip(np.floor(fy).astype(int), 0, max(rows - 2, 0))
    x0 = np.clip(np.floor(fx).astype(int), 0, max(cols - 2, 0))
    y1 = np.minimum(y0 + 1, rows - 1)
    x1 = np.minimum(x0 + 1, cols - 1)
    ty = fy - y0
    tx = fx - x0
    return (
        values[y0, x0] * (1 - ty) * (1 - tx)
        + values[y0, x1] * (1 - ty) * tx
        + values[y1, x0] * ty * (1 - tx)
        + values[y1, x1] * ty * tx
    )


def _fractional_indices(src: GridMeta, target: GridMeta) -> tuple:
    lat_t = target.lat_centers()
    lon_t = target.lon_centers()
    ext = src.extent()
    if (
        lat_t[0] < ext.lat_min - ALIGN_TOL
        or lat_t[-1] > ext.lat_max + ALIGN_TOL
        or lon_t[0] < ext.lon_min - ALIGN_TOL
        or lon_t[-1] > ext.lon_max + ALIGN_TOL
    ):
        raise ExtentMismatch("target cell centers fall outside the source extent")
    fy = (lat_t - (src.lat_sw + 0.5 * src.cell_deg)) / src.cell_deg
    fx = (lon_t - (src.lon_sw + 0.5 * src.cell_deg)) / src.cell_deg
    return np.meshgrid(fy, fx, indexing="ij")


def resample_to(src: Grid, target_meta: GridMeta) -> Grid:
    """Bilinear resampling of ``src`` onto ``target_meta`` cell centers."""
    if src.meta.aligned(target_meta):
        if isinstance(src, Dem):
            return replace(src, meta=target_meta)
        return replace(src, meta=target_meta)
    fy, fx = _fractional_indices(src.meta, target_meta)
    if isinstance(src, PrecipFrame):
        vals = _bilinear_sample(np.where(src.missing_mask, 0.0, src.values), fy, fx)
        touched = _bilinear_sample(src.missing_mask.astype(np.float64), fy, fx)
        mask = touched > 0.0
        vals = np.where(mask, 0.0, np.maximum(vals, 0.0))
        return PrecipFrame(
            meta=target_meta, timestamp=src.timestamp, values=vals, missing_mask=mask
        )
    if isinstance(src, Dem):
        elev = _bilinear_sample(src.elevation, fy, fx)
        out = Dem(meta=target_meta, elevation=elev)
        if src.grad_x is not None or src.grad_y is not None:
            out = terrain_gradient(out)
        return out
    raise TypeError(f"cannot resample object of type {type(src).__name__}")


def undersample(series: FrameSeries, factor: int) -> FrameSeries:
    """Keep frames at indices 0, factor, 2*factor, ...; step multiplied by factor."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if len(series) <= factor:
        raise ValueError("series must be longer than the undersampling factor")
    return FrameSeries(
        frames=series.frames[::factor],
        step_minutes=series.step_minutes * factor,
    )


def normalize_precip(frame_or_values):
    """log(1 + v) transform of rain rates; accepts a PrecipFrame or an array."""
    if isinstance(frame_or_values, PrecipFrame):
        vals = frame_or_values.values
        if np.any(vals[frame_or_values.valid_mask] < 0):
            raise NegativeInput("rain rates must be non-negative")
        return np.log1p(np.where(frame_or_values.missing_mask, 0.0, vals))
    vals = np.asarray(frame_or_values, dtype=np.float64)
    if np.any(vals < 0):
        raise NegativeInput("rain rates must be non-negative")
    return np.log1p(vals)


def denormalize_precip(values: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normalize_precip`: exp(v) - 1."""
    return np.expm1(np.asarray(values, dtype=np.float64))


def affine_timestamp(t0: datetime, t1: datetime, t: float) -> datetime:
    return t0 + (t1 - t0) * t
