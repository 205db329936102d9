"""Simplified mass-conserving 2D overland-flow surrogate.

Explicit-Euler, 4-neighbor head-difference routing: each cell sends water to
its lower-head neighbors proportionally to each neighbor's share of the total
positive head drop, scaled by a routing coefficient, with the total outflow
capped at the cell's available depth.  Water in boundary-ring cells exits the
domain and is tallied, so the per-step mass balance closes exactly:

    sum(depth_after) = sum(depth_before) + rain_in - infiltration - outflow

This is a deliberately simple surrogate for a full hydrological model; it is
meant to reproduce qualitative sensitivity behavior (ponding in valleys,
persistence of depth error), not calibrated flood depths.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta
from enum import IntEnum
from typing import List, Optional

import numpy as np

from .errors import InstabilityDetected, ShapeMismatch
from .grids import Dem, FrameSeries, GridMeta, PrecipFrame

MM_PER_M = 1000.0
SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class FloodState:
    """Water depth field (m) at one instant."""

    meta: GridMeta
    depth: np.ndarray
    time: datetime

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        if depth.shape != (self.meta.rows, self.meta.cols):
            raise ShapeMismatch("depth shape does not match grid")
        if not np.all(np.isfinite(depth)):
            raise ValueError("depth must be finite")
        if np.any(depth < 0):
            raise ValueError("depth must be non-negative")
        object.__setattr__(self, "depth", depth)

    @classmethod
    def zeros(cls, meta: GridMeta, time: datetime) -> "FloodState":
        return cls(meta=meta, depth=np.zeros((meta.rows, meta.cols)), time=time)


@dataclass(frozen=True)
class SimConfig:
    dt_seconds: float = 300.0
    infiltration_mm_per_hr: float = 0.0
    routing_coefficient: float = 0.1
    sim_hours: Optional[float] = None

    def __post_init__(self):
        if self.dt_seconds <= 0:
            raise ValueError("dt_seconds must be positive")
        if not 0.0 < self.routing_coefficient <= 0.2:
            raise ValueError("routing_coefficient must lie in (0, 0.2]")
        if self.infiltration_mm_per_hr < 0:
            raise ValueError("infiltration rate must be non-negative")


@dataclass(frozen=True)
class MassBudget:
    """Volumes (summed depth, m * cells) moved during one step."""

    rain_in: float
    infiltration_out: float
    boundary_outflow: float


def _route(depth: np.ndarray, elevation: np.ndarray, kappa: float):
    """One routing substep; returns (new_depth, boundary_outflow_volume)."""
    head = elevation + depth
    rows, cols = depth.shape
    # Positive head drops toward the four neighbors; edges have no neighbor.
    drops = np.zeros((4, rows, cols))
    drops[0, 1:, :] = head[1:, :] - head[:-1, :]    # to the south (row - 1)
    drops[1, :-1, :] = head[:-1, :] - head[1:, :]   # to the north (row + 1)
    drops[2, :, 1:] = head[:, 1:] - head[:, :-1]    # to the west  (col - 1)
    drops[3, :, :-1] = head[:, :-1] - head[:, 1:]   # to the east  (col + 1)
    np.clip(drops, 0.0, None, out=drops)
    total_drop = drops.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(total_drop > 0, drops / total_drop, 0.0)
    desired = kappa * drops * share
    desired_total = desired.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(desired_total > 0, np.minimum(1.0, depth / np.where(desired_total > 0, desired_total, 1.0)), 0.0)
    amount = desired * scale
    out_total = amount.sum(axis=0)
    if np.any(out_total > depth * (1 + 1e-9) + 1e-15):
        raise InstabilityDetected("routing outflow exceeds available water")
    inflow = np.zeros_like(depth)
    inflow[:-1, :] += amount[0, 1:, :]
    inflow[1:, :] += amount[1, :-1, :]
    inflow[:, :-1] += amount[2, :, 1:]
    inflow[:, 1:] += amount[3, :, :-1]
    # Water routed into the boundary ring leaves the domain instead of
    # accumulating there; standing water on the ring is unaffected.
    boundary = np.zeros_like(depth, dtype=bool)
    boundary[0, :] = boundary[-1, :] = True
    boundary[:, 0] = boundary[:, -1] = True
    outflow = float(inflow[boundary].sum())
    inflow[boundary] = 0.0
    new_depth = depth - out_total + inflow
    np.clip(new_depth, 0.0, None, out=new_depth)
    return new_depth, outflow


def step_with_budget(
    state: FloodState, rain: PrecipFrame, dem: Dem, cfg: SimConfig
) -> tuple:
    """Advance one forcing step; returns (new FloodState, MassBudget)."""
    if not state.meta.aligned(rain.meta) or not state.meta.aligned(dem.meta):
        raise ShapeMismatch("state, rain and DEM grids must be aligned")
    dt = cfg.dt_seconds
    rain_m = np.where(rain.missing_mask, 0.0, rain.values) / MM_PER_M * dt / SECONDS_PER_HOUR
    depth = state.depth + rain_m
    infil_cap = cfg.infiltration_mm_per_hr / MM_PER_M * dt / SECONDS_PER_HOUR
    infil = np.minimum(depth, infil_cap)
    depth = depth - infil
    depth, outflow = _route(depth, dem.elevation, cfg.routing_coefficient)
    new_state = FloodState(
        meta=state.meta, depth=depth, time=state.time + timedelta(seconds=dt)
    )
    budget = MassBudget(
        rain_in=float(rain_m.sum()),
        infiltration_out=float(infil.sum()),
        boundary_outflow=outflow,
    )
    return new_state, budget


def step(state: FloodState, rain: PrecipFrame, dem: Dem, cfg: SimConfig) -> FloodState:
    return step_with_budget(state, rain, dem, cfg)[0]


def run_with_budget(series: FrameSeries, dem: Dem, cfg: SimConfig) -> tuple:
    """Fold the step over the forcing series; returns (states, budgets)."""
    if abs(series.step_minutes * 60.0 - cfg.dt_seconds) > 1e-9:
        raise ValueError(
            f"forcing step {series.step_minutes} min does not match "
            f"dt {cfg.dt_seconds} s"
        )
    n_steps = len(series)
    if cfg.sim_hours is not None:
        n_steps = min(n_steps, int(round(cfg.sim_hours * 3600.0 / cfg.dt_seconds)))
    state = FloodState.zeros(series.meta, series.frames[0].timestamp)
    states: List[FloodState] = []
    budgets: List[MassBudget] = []
    for frame in series.frames[:n_steps]:
        state, budget = step_with_budget(state, frame, dem, cfg)
        states.append(state)
        budgets.append(budget)
    return states, budgets


def run(series: FrameSeries, dem: Dem, cfg: SimConfig) -> List[FloodState]:
    """Depth trajectory, one FloodState per forcing step."""
    return run_with_budget(series, dem, cfg)[0]


def flood_extent(state: FloodState, threshold_m: float) -> np.ndarray:
    """Boolean flooded map: depth >= threshold (inclusive at the threshold)."""
    if threshold_m <= 0:
        raise ValueError("threshold must be positive")
    return state.depth >= threshold_m


class DiffCode(IntEnum):
    SAME = 0
    MISSING = 1  # flooded in a, dry in b
    EXTRA = 2    # dry in a, flooded in b


def extent_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cellwise comparison of two extent maps as DiffCode values."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeMismatch("extent maps must share a shape")
    out = np.full(a.shape, DiffCode.SAME, dtype=np.int8)
    out[a & ~b] = DiffCode.MISSING
    out[~a & b] = DiffCode.EXTRA
    return out
