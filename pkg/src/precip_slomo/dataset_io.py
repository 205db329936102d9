"""Dataset ingestion and on-disk formats.

Radar series live as a JSON manifest plus one raster file per frame (.npy,
flat .bin, or single-band TIFF).  DEMs use a JSON descriptor pointing at one
raster.  Flood trajectories are a directory of per-step .npy grids with a
JSON manifest.  Raster files are stored as float32; arrays are promoted to
float64 in memory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import GridMismatch, ManifestError, UnitUnknown
from .floodsim import FloodState
from .grids import (
    Dem,
    FrameSeries,
    GridMeta,
    PrecipFrame,
    resample_to,
    terrain_gradient,
)


@dataclass(frozen=True)
class DatasetManifest:
    source: str
    step_minutes: int
    units: str
    grid: GridMeta
    frame_paths: tuple
    timestamps: tuple
    missing_value: Optional[float] = None
    dtype: str = "float32"

    def __post_init__(self):
        if len(self.frame_paths) != len(self.timestamps):
            raise ManifestError("file count does not equal timestamp count")
        if list(self.timestamps) != sorted(self.timestamps):
            raise ManifestError("timestamps must be sorted")


def _meta_to_dict(meta: GridMeta) -> dict:
    return {
        "rows": meta.rows,
        "cols": meta.cols,
        "lat_sw": meta.lat_sw,
        "lon_sw": meta.lon_sw,
        "cell_deg": meta.cell_deg,
        "crs_note": meta.crs_note,
    }


def _meta_from_dict(d: dict) -> GridMeta:
    try:
        return GridMeta(
            rows=int(d["rows"]),
            cols=int(d["cols"]),
            lat_sw=float(d["lat_sw"]),
            lon_sw=float(d["lon_sw"]),
            cell_deg=float(d["cell_deg"]),
            crs_note=d.get("crs_note", "WGS84 geographic, cell-center registered"),
        )
    except KeyError as exc:
        raise ManifestError(f"grid description missing field {exc}") from exc


def _load_raster(path: Path, shape: tuple, dtype: str) -> np.ndarray:
    suffix = path.suffix.lower()
    if suffix == ".npy":
        arr = np.load(path)
    elif suffix == ".bin":
        arr = np.fromfile(path, dtype=np.dtype(dtype)).reshape(shape)
    elif suffix in (".tif", ".tiff"):
        from PIL import Image

        arr = np.asarray(Image.open(path))
    else:
        raise ManifestError(f"unsupported raster format {path.suffix!r}")
    if arr.ndim != 2:
        raise GridMismatch(f"{path.name}: expected a single-band 2D raster")
    if arr.shape != shape:
        raise GridMismatch(f"{path.name}: shape {arr.shape} != manifest grid {shape}")
    return np.asarray(arr, dtype=np.float64)


def load_manifest(manifest_path) -> DatasetManifest:
    manifest_path = Path(manifest_path)
    try:
        raw = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {manifest_path}: {exc}") from exc
    try:
        frames = raw["frames"]
        return DatasetManifest(
            source=raw.get("source", "unknown"),
            step_minutes=int(raw["step_minutes"]),
            units=raw["units"],
            grid=_meta_from_dict(raw["grid"]),
            frame_paths=tuple(f["path"] for f in frames),
            timestamps=tuple(
                datetime.fromisoformat(f["timestamp"]) for f in frames
            ),
            missing_value=raw.get("missing_value"),
            dtype=raw.get("dtype", "float32"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"invalid manifest {manifest_path}: {exc}") from exc


def _to_mm_per_hr(values: np.ndarray, units: str, step_minutes: int) -> np.ndarray:
    if units in ("mm/hr", "mm_per_hr"):
        return values
    if units == "mm":  # accumulation over one step
        return values * (60.0 / step_minutes)
    raise UnitUnknown(f"cannot convert unit {units!r} to mm/hr")


def ingest_radar(manifest_path) -> FrameSeries:
    """Load a radar frame series; sentinel cells become the missing mask."""
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    shape = (manifest.grid.rows, manifest.grid.cols)
    frames = []
    for rel, stamp in zip(manifest.frame_paths, manifest.timestamps):
        values = _load_raster(manifest_path.parent / rel, shape, manifest.dtype)
        if manifest.missing_value is not None:
            mask = values == manifest.missing_value
            values = np.where(mask, 0.0, values)
        else:
            mask = np.zeros(shape, dtype=bool)
        nan_mask = ~np.isfinite(values)
        mask |= nan_mask
        values = np.where(nan_mask, 0.0, values)
        values = _to_mm_per_hr(values, manifest.units, manifest.step_minutes)
        frames.append(
            PrecipFrame(
                meta=manifest.grid, timestamp=stamp, values=values, missing_mask=mask
            )
        )
    try:
        return FrameSeries(frames=tuple(frames), step_minutes=manifest.step_minutes)
    except ValueError as exc:
        raise ManifestError(str(exc)) from exc


def write_series(series: FrameSeries, out_dir, source: str = "precip-slomo") -> Path:
    """Write a series as float32 .npy frames plus manifest.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = []
    for k, frame in enumerate(series.frames):
        name = f"frame_{k:05d}.npy"
        values = frame.values.astype(np.float32)
        if frame.missing_mask.any():
            values = np.where(frame.missing_mask, np.float32(-1.0), values)
        np.save(out_dir / name, values)
        frames.append({"path": name, "timestamp": frame.timestamp.isoformat()})
    manifest = {
        "source": source,
        "step_minutes": series.step_minutes,
        "units": "mm/hr",
        "missing_value": -1.0,
        "dtype": "float32",
        "grid": _meta_to_dict(series.meta),
        "frames": frames,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def ingest_dem(path, target_meta: GridMeta) -> Dem:
    """Load a DEM descriptor, resample onto ``target_meta``, add gradients."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read DEM descriptor {path}: {exc}") from exc
    meta = _meta_from_dict(raw["grid"])
    elev = _load_raster(
        path.parent / raw["data"], (meta.rows, meta.cols), raw.get("dtype", "float32")
    )
    dem = Dem(meta=meta, elevation=elev)
    if not dem.meta.aligned(target_meta):
        dem = resample_to(dem, target_meta)
    return terrain_gradient(dem)


def write_dem(dem: Dem, out_dir, name: str = "dem") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    np.save(out_dir / f"{name}.npy", dem.elevation.astype(np.float32))
    descriptor = {
        "grid": _meta_to_dict(dem.meta),
        "data": f"{name}.npy",
        "dtype": "float32",
    }
    path = out_dir / f"{name}.json"
    path.write_text(json.dumps(descriptor, indent=2, sort_keys=True))
    return path


def write_trajectory(states: List[FloodState], out_dir) -> Path:
    """Depth trajectory as per-step .npy grids plus a JSON manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = []
    for k, state in enumerate(states):
        name = f"step_{k:05d}.npy"
        np.save(out_dir / name, state.depth.astype(np.float32))
        steps.append({"path": name, "timestamp": state.time.isoformat()})
    manifest = {
        "dims": [states[0].meta.rows, states[0].meta.cols],
        "dtype": "float32",
        "scale": 1.0,
        "units": "m",
        "grid": _meta_to_dict(states[0].meta),
        "steps": steps,
    }
    path = out_dir / "trajectory.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_trajectory(dir_path) -> List[FloodState]:
    dir_path = Path(dir_path)
    try:
        raw = json.loads((dir_path / "trajectory.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read trajectory in {dir_path}: {exc}") from exc
    meta = _meta_from_dict(raw["grid"])
    states = []
    for entry in raw["steps"]:
        depth = _load_raster(
            dir_path / entry["path"], (meta.rows, meta.cols), raw.get("dtype", "float32")
        )
        states.append(
            FloodState(
                meta=meta,
                depth=depth,
                time=datetime.fromisoformat(entry["timestamp"]),
            )
        )
    return states
