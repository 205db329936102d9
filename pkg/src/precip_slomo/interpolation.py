"""Series-level interpolation drivers: the linear baseline and model-based
densification of a coarse series to a finer cadence."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import IncompatibleSteps, ShapeMismatch, TOutOfRange
from .flownet import ModelParams, forward_interpolate
from .grids import Dem, FrameSeries, PrecipFrame, affine_timestamp


def linear_interpolate(i0: PrecipFrame, i1: PrecipFrame, t: float) -> PrecipFrame:
    """(1-t)*i0 + t*i1 per pixel, in physical units (mm/hr).

    A cell is missing in the output when it is missing in either input.
    """
    if not i0.meta.aligned(i1.meta):
        raise ShapeMismatch("input frames are not aligned")
    if not 0.0 <= t <= 1.0:
        raise TOutOfRange(f"t must lie in [0, 1], got {t}")
    missing = i0.missing_mask | i1.missing_mask
    values = (1.0 - t) * i0.values + t * i1.values
    values = np.where(missing, 0.0, values)
    return PrecipFrame(
        meta=i0.meta,
        timestamp=affine_timestamp(i0.timestamp, i1.timestamp, t),
        values=values,
        missing_mask=missing,
    )


def densify_series(
    series: FrameSeries,
    target_step_minutes: int,
    method: str = "linear",
    params: Optional[ModelParams] = None,
    dem: Optional[Dem] = None,
) -> FrameSeries:
    """Insert interpolated frames between each consecutive pair so the output
    runs at ``target_step_minutes``.  Original frames pass through unmodified.

    ``method`` is ``"linear"`` or ``"model"``; the model method needs
    ``params`` and ``dem``.
    """
    if target_step_minutes <= 0 or series.step_minutes % target_step_minutes != 0:
        raise IncompatibleSteps(
            f"coarse step {series.step_minutes} is not divisible by "
            f"target step {target_step_minutes}"
        )
    if method not in ("linear", "model"):
        raise ValueError(f"unknown method {method!r}")
    if method == "model" and (params is None or dem is None):
        raise ValueError("the model method requires params and dem")
    ratio = series.step_minutes // target_step_minutes
    frames = []
    for i0, i1 in zip(series.frames, series.frames[1:]):
        frames.append(i0)
        for k in range(1, ratio):
            t = k / ratio
            if method == "linear":
                frames.append(linear_interpolate(i0, i1, t))
            else:
                frames.append(forward_interpolate(params, i0, i1, dem, t))
    frames.append(series.frames[-1])
    return FrameSeries(frames=tuple(frames), step_minutes=target_step_minutes)
