"""Verification metrics and figure emission.

Metrics accumulate in float64 regardless of the storage dtype.  Every figure
written by :func:`emit_figures` is accompanied by a CSV holding exactly the
numbers that were plotted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyWindow, TimestampMismatch
from .floodsim import FloodState
from .grids import BBox, FrameSeries, _crop_slices


def _region_slices(meta, region: Optional[BBox]):
    if region is None:
        return slice(None), slice(None)
    _, rs, cs = _crop_slices(meta, region)
    return rs, cs


def mae_by_offset(
    truth: FrameSeries,
    pred: FrameSeries,
    coarse_step_minutes: int,
    region: Optional[BBox] = None,
) -> Dict[int, float]:
    """MAE keyed by minutes past the preceding coarse frame.

    Frames sitting exactly on the coarse grid (offset 0) are the pass-through
    originals and are excluded.  Missing cells are excluded.
    """
    if len(truth) != len(pred) or truth.step_minutes != pred.step_minutes:
        raise TimestampMismatch("series lengths or steps differ")
    for a, b in zip(truth.frames, pred.frames):
        if a.timestamp != b.timestamp:
            raise TimestampMismatch(f"timestamps differ at {a.timestamp}")
    rs, cs = _region_slices(truth.meta, region)
    sums: Dict[int, float] = {}
    counts: Dict[int, int] = {}
    for k, (a, b) in enumerate(zip(truth.frames, pred.frames)):
        offset = (k * truth.step_minutes) % coarse_step_minutes
        if offset == 0:
            continue
        valid = ~(a.missing_mask | b.missing_mask)[rs, cs]
        diff = np.abs(a.values[rs, cs] - b.values[rs, cs])[valid]
        sums[offset] = sums.get(offset, 0.0) + float(diff.sum())
        counts[offset] = counts.get(offset, 0) + int(valid.sum())
    return {off: sums[off] / counts[off] for off in sorted(sums) if counts[off]}


def group_offsets_symmetric(
    mae: Dict[int, float], coarse_step_minutes: int
) -> Dict[Tuple[int, int], float]:
    """Average offsets symmetric about the interval midpoint, e.g. {5, 25}."""
    out: Dict[Tuple[int, int], float] = {}
    for off in sorted(mae):
        mirror = coarse_step_minutes - off
        key = (min(off, mirror), max(off, mirror))
        if key in out:
            continue
        vals = [mae[off]]
        if mirror != off and mirror in mae:
            vals.append(mae[mirror])
        out[key] = float(np.mean(vals))
    return out


def _series_grids(obj, region: Optional[BBox]):
    """Normalize a FrameSeries or a FloodState list to (timestamps, arrays)."""
    if isinstance(obj, FrameSeries):
        rs, cs = _region_slices(obj.meta, region)
        stamps = [f.timestamp for f in obj.frames]
        arrays = [np.where(f.missing_mask, 0.0, f.values)[rs, cs] for f in obj.frames]
        return stamps, arrays
    states: Sequence[FloodState] = obj
    rs, cs = _region_slices(states[0].meta, region)
    return [s.time for s in states], [s.depth[rs, cs] for s in states]


def rmse_series(a, b, region: Optional[BBox] = None) -> List[float]:
    """Per-timestamp RMSE over region cells between two gridded time series."""
    stamps_a, grids_a = _series_grids(a, region)
    stamps_b, grids_b = _series_grids(b, region)
    if stamps_a != stamps_b:
        raise TimestampMismatch("series timestamps differ")
    return [
        float(np.sqrt(np.mean((ga - gb) ** 2)))
        for ga, gb in zip(grids_a, grids_b)
    ]


def normalize_series(values: Sequence[float]) -> Tuple[List[float], bool]:
    """Divide by the series maximum; returns (normalized, degenerate_flag).

    An all-zero series cannot be normalized; it is returned unchanged with the
    flag set instead of dividing by zero.
    """
    values = [float(v) for v in values]
    peak = max(values) if values else 0.0
    if peak <= 0.0:
        return list(values), True
    return [v / peak for v in values], False


def window_aggregate(
    metric_series: Sequence[float], windows: Sequence[Tuple[int, int]]
) -> List[float]:
    """Arithmetic mean of the metric over each inclusive index window."""
    out = []
    n = len(metric_series)
    for start, end in windows:
        if start < 0 or end >= n or start > end:
            raise EmptyWindow(f"window ({start}, {end}) not within series of {n}")
        out.append(float(np.mean(metric_series[start : end + 1])))
    return out


@dataclass
class ResultsBundle:
    """Everything :func:`emit_figures` knows how to render."""

    mae: Dict[str, Dict[int, float]] = field(default_factory=dict)
    coarse_step_minutes: int = 30
    rmse_precip_norm: Optional[List[float]] = None
    rmse_depth_norm: Optional[List[float]] = None
    extent_a: Optional[np.ndarray] = None
    extent_b: Optional[np.ndarray] = None


def _write_csv(path: Path, header: List[str], rows: List[List]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                ["%.12g" % v if isinstance(v, float) else v for v in row]
            )


def emit_figures(bundle: ResultsBundle, out_dir) -> List[Path]:
    """Render the MAE-by-offset chart, the dual normalized-RMSE chart, and the
    flood extent / diff maps, each with its numeric CSV.  Returns the paths
    written."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.colors import ListedColormap

    if not bundle.mae:
        raise ValueError("results bundle contains no methods")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []

    # MAE by offset, raw and symmetric-grouped.
    fig, ax = plt.subplots(figsize=(6, 4))
    rows = []
    for method, mae in sorted(bundle.mae.items()):
        offsets = sorted(mae)
        ax.plot(offsets, [mae[o] for o in offsets], marker="o", label=method)
        rows.extend([method, o, float(mae[o])] for o in offsets)
    ax.set_xlabel("minutes past preceding coarse frame")
    ax.set_ylabel("MAE (mm/hr)")
    ax.legend()
    fig.savefig(out_dir / "mae_by_offset.png", dpi=120)
    plt.close(fig)
    _write_csv(out_dir / "mae_by_offset.csv", ["method", "offset_minutes", "mae"], rows)
    grouped_rows = []
    for method, mae in sorted(bundle.mae.items()):
        grouped = group_offsets_symmetric(mae, bundle.coarse_step_minutes)
        grouped_rows.extend(
            [method, f"{lo}|{hi}", float(v)] for (lo, hi), v in sorted(grouped.items())
        )
    _write_csv(
        out_dir / "mae_by_offset_grouped.csv",
        ["method", "offset_pair_minutes", "mae"],
        grouped_rows,
    )
    written += [
        out_dir / "mae_by_offset.png",
        out_dir / "mae_by_offset.csv",
        out_dir / "mae_by_offset_grouped.csv",
    ]

    if bundle.rmse_precip_norm is not None and bundle.rmse_depth_norm is not None:
        fig, ax = plt.subplots(figsize=(6, 4))
        steps = list(range(len(bundle.rmse_precip_norm)))
        ax.plot(steps, bundle.rmse_precip_norm, label="precipitation RMSE (norm)")
        ax.plot(steps, bundle.rmse_depth_norm, label="flood depth RMSE (norm)")
        ax.set_xlabel("forcing step")
        ax.set_ylabel("normalized RMSE")
        ax.legend()
        fig.savefig(out_dir / "rmse_norm.png", dpi=120)
        plt.close(fig)
        _write_csv(
            out_dir / "rmse_norm.csv",
            ["step", "precip_rmse_norm", "depth_rmse_norm"],
            [
                [k, float(p), float(d)]
                for k, (p, d) in enumerate(
                    zip(bundle.rmse_precip_norm, bundle.rmse_depth_norm)
                )
            ],
        )
        written += [out_dir / "rmse_norm.png", out_dir / "rmse_norm.csv"]

    if bundle.extent_a is not None and bundle.extent_b is not None:
        from .floodsim import extent_diff

        diff = extent_diff(bundle.extent_a, bundle.extent_b)
        fig, axes = plt.subplots(1, 3, figsize=(12, 4))
        axes[0].imshow(bundle.extent_a, origin="lower", cmap="Blues")
        axes[0].set_title("extent A")
        axes[1].imshow(bundle.extent_b, origin="lower", cmap="Blues")
        axes[1].set_title("extent B")
        # same -> white, missing -> red, extra -> blue
        cmap = ListedColormap(["#ffffff", "#d62728", "#1f77b4"])
        axes[2].imshow(diff, origin="lower", cmap=cmap, vmin=0, vmax=2)
        axes[2].set_title("diff (red missing, blue extra)")
        fig.savefig(out_dir / "extent_diff.png", dpi=120)
        plt.close(fig)
        _write_csv(
            out_dir / "extent_diff.csv",
            ["row", "col", "code"],
            [
                [int(r), int(c), int(diff[r, c])]
                for r in range(diff.shape[0])
                for c in range(diff.shape[1])
            ],
        )
        written += [out_dir / "extent_diff.png", out_dir / "extent_diff.csv"]

    return written
