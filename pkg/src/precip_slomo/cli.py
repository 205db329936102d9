"""Command-line surface tying the pipeline together.

Subcommands: synth, ingest, train, interpolate, evaluate, floodsim, plot.
Every subcommand is deterministic given identical inputs and seed, and writes
only under its output directory.  Failures print one machine-readable JSON
line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset_io, evaluation, floodsim, interpolation, synth, training
from .config import default_seed, load_config
from .errors import PrecipSlomoError
from .grids import BBox, crop_series, undersample
from .training import build_triplets, load_checkpoint, save_checkpoint


def _parse_bbox(text: str) -> BBox:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 4:
        raise ValueError("bbox must be lat_min,lon_min,lat_max,lon_max")
    return BBox(lat_min=parts[0], lon_min=parts[1], lat_max=parts[2], lon_max=parts[3])


def _parse_windows(text: str):
    windows = []
    for chunk in text.split(","):
        start, end = chunk.split(":")
        windows.append((int(start), int(end)))
    return windows


def _cmd_synth(args) -> int:
    kwargs = {}
    if args.hours is not None:
        kwargs["hours"] = args.hours
    if args.size is not None:
        kwargs["size"] = args.size
    series, dem = synth.make_scenario(args.scenario, seed=args.seed, **kwargs)
    out = Path(args.out)
    dataset_io.write_series(series, out, source=f"synth {args.scenario}")
    dataset_io.write_dem(dem, out)
    print(f"wrote {len(series)} frames and DEM to {out}")
    return 0


def _cmd_ingest(args) -> int:
    series = dataset_io.ingest_radar(args.manifest)
    if args.bbox:
        series = crop_series(series, _parse_bbox(args.bbox))
    dataset_io.write_series(series, args.out, source=f"ingest {args.manifest}")
    print(f"wrote {len(series)} cropped frames to {args.out}")
    return 0


def _load_series_for_config(cfg):
    series = dataset_io.ingest_radar(cfg.radar_manifest)
    if cfg.bbox is not None:
        series = crop_series(series, cfg.bbox)
    return series


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    series = _load_series_for_config(cfg)
    if series.step_minutes != 30:
        if 30 % series.step_minutes != 0:
            raise PrecipSlomoError(
                f"cannot undersample a {series.step_minutes}-min series to 30 min"
            )
        series = undersample(series, 30 // series.step_minutes)
    triplets = build_triplets(series)
    dem = dataset_io.ingest_dem(cfg.dem, series.meta)
    out_dir = Path(cfg.out_dir)
    train_cfg = cfg.train
    if train_cfg.checkpoint_dir is None:
        from dataclasses import replace

        train_cfg = replace(train_cfg, checkpoint_dir=str(out_dir / "checkpoints"))
    params, log = training.train(train_cfg, triplets, dem)
    save_checkpoint(params, out_dir / "model.npz")
    print(f"trained {len(log)} epochs; final mean loss {log[-1].mean_loss:.6f}")
    return 0


def _cmd_interpolate(args) -> int:
    cfg = load_config(args.config)
    series = _load_series_for_config(cfg)
    if series.step_minutes != args.from_step:
        if args.from_step % series.step_minutes != 0:
            raise PrecipSlomoError(
                f"cannot undersample a {series.step_minutes}-min series "
                f"to {args.from_step} min"
            )
        series = undersample(series, args.from_step // series.step_minutes)
    params = None
    dem = None
    if args.method == "model":
        ckpt = args.checkpoint or str(Path(cfg.out_dir) / "model.npz")
        params = load_checkpoint(ckpt)
        dem = dataset_io.ingest_dem(cfg.dem, series.meta)
    dense = interpolation.densify_series(
        series, args.to_step, method=args.method, params=params, dem=dem
    )
    out = args.out or str(Path(cfg.out_dir) / f"interp_{args.method}")
    dataset_io.write_series(dense, out, source=f"interpolate {args.method}")
    print(f"wrote {len(dense)} frames at {args.to_step}-min step to {out}")
    return 0


def _cmd_evaluate(args) -> int:
    truth = dataset_io.ingest_radar(args.truth)
    region = _parse_bbox(args.region) if args.region else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mae_rows = []
    grouped_rows = []
    window_rows = []
    for entry in args.pred:
        if "=" in entry:
            method, manifest = entry.split("=", 1)
        else:
            method, manifest = Path(entry).parent.name or "pred", entry
        pred = dataset_io.ingest_radar(manifest)
        mae = evaluation.mae_by_offset(truth, pred, args.coarse_step, region=region)
        grouped = evaluation.group_offsets_symmetric(mae, args.coarse_step)
        mae_rows.extend([method, o, "%.12g" % mae[o]] for o in sorted(mae))
        grouped_rows.extend(
            [method, f"{lo}|{hi}", "%.12g" % v] for (lo, hi), v in sorted(grouped.items())
        )
        if args.windows:
            per_frame = evaluation.rmse_series(truth, pred, region=region)
            means = evaluation.window_aggregate(per_frame, _parse_windows(args.windows))
            window_rows.extend(
                [method, f"{w[0]}:{w[1]}", "%.12g" % m]
                for w, m in zip(_parse_windows(args.windows), means)
            )
    _write_rows(out / "mae_by_offset.csv", ["method", "offset_minutes", "mae"], mae_rows)
    _write_rows(
        out / "mae_by_offset_grouped.csv",
        ["method", "offset_pair_minutes", "mae"],
        grouped_rows,
    )
    if window_rows:
        _write_rows(
            out / "window_rmse.csv", ["method", "window", "mean_rmse"], window_rows
        )
    print(f"wrote metrics to {out}")
    return 0


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _cmd_floodsim(args) -> int:
    cfg = load_config(args.config, check_paths=False)
    rain = dataset_io.ingest_radar(args.rain)
    dem = dataset_io.ingest_dem(args.dem, rain.meta)
    states = floodsim.run(rain, dem, cfg.sim)
    out = Path(args.out)
    dataset_io.write_trajectory(states, out)
    peak = max(float(s.depth.max()) for s in states)
    print(f"wrote {len(states)} depth states to {out} (peak depth {peak:.3f} m)")
    return 0


def _cmd_plot(args) -> int:
    results = Path(args.results)
    bundle = evaluation.ResultsBundle(coarse_step_minutes=args.coarse_step)
    mae_path = results / "mae_by_offset.csv"
    if mae_path.exists():
        with open(mae_path, newline="") as fh:
            for row in csv.DictReader(fh):
                bundle.mae.setdefault(row["method"], {})[int(row["offset_minutes"])] = (
                    float(row["mae"])
                )
    rmse_path = results / "rmse_norm.csv"
    if rmse_path.exists():
        precip, depth = [], []
        with open(rmse_path, newline="") as fh:
            for row in csv.DictReader(fh):
                precip.append(float(row["precip_rmse_norm"]))
                depth.append(float(row["depth_rmse_norm"]))
        bundle.rmse_precip_norm = precip
        bundle.rmse_depth_norm = depth
    for attr, name in (("extent_a", "extent_a.npy"), ("extent_b", "extent_b.npy")):
        p = results / name
        if p.exists():
            setattr(bundle, attr, np.load(p).astype(bool))
    written = evaluation.emit_figures(bundle, args.out)
    print(f"wrote {len(written)} files to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="precip-slomo",
        description="Temporal precipitation interpolation and flood-impact surrogate",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scenario dataset")
    p.add_argument("--scenario", required=True, choices=synth.SCENARIOS)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--hours", type=float, default=None)
    p.add_argument("--size", type=int, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="load, crop and materialize a radar series")
    p.add_argument("--manifest", required=True)
    p.add_argument("--bbox", default=None, help="lat_min,lon_min,lat_max,lon_max")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("train", help="self-supervised training on 30-min triplets")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("interpolate", help="densify a coarse series")
    p.add_argument("--config", required=True)
    p.add_argument("--method", required=True, choices=["linear", "model"])
    p.add_argument("--from-step", type=int, default=30)
    p.add_argument("--to-step", type=int, default=5)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_interpolate)

    p = sub.add_parser("evaluate", help="metrics between truth and predictions")
    p.add_argument("--truth", required=True)
    p.add_argument(
        "--pred",
        required=True,
        nargs="+",
        help="prediction manifests, optionally method=path",
    )
    p.add_argument("--coarse-step", type=int, default=30)
    p.add_argument("--windows", default=None, help="start:end[,start:end...]")
    p.add_argument("--region", default=None, help="lat_min,lon_min,lat_max,lon_max")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("floodsim", help="run the overland-flow surrogate")
    p.add_argument("--rain", required=True)
    p.add_argument("--dem", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_floodsim)

    p = sub.add_parser("plot", help="emit figures from a results directory")
    p.add_argument("--results", required=True)
    p.add_argument("--coarse-step", type=int, default=30)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PrecipSlomoError, OSError, ValueError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
