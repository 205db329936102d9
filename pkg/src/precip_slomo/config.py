"""Run configuration: a nested YAML document with full round-trip fidelity."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import yaml

from .errors import ManifestError
from .flownet import UNetSpec
from .floodsim import SimConfig
from .grids import BBox
from .losses import LossWeights
from .training import TrainConfig

SEED_ENV_VAR = "PRECIP_SLOMO_SEED"


def default_seed() -> int:
    return int(os.environ.get(SEED_ENV_VAR, "0"))


@dataclass(frozen=True)
class RunConfig:
    radar_manifest: str
    dem: str
    out_dir: str
    bbox: Optional[BBox] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    methods: List[str] = field(default_factory=lambda: ["linear", "model"])
    seed: int = 0


def _spec_dict(spec: UNetSpec) -> dict:
    return {
        "levels": spec.levels,
        "channels_per_level": list(spec.channels_per_level),
        "activation_slope": spec.activation_slope,
    }


def config_to_dict(cfg: RunConfig) -> dict:
    train = cfg.train
    return {
        "paths": {
            "radar_manifest": cfg.radar_manifest,
            "dem": cfg.dem,
            "out_dir": cfg.out_dir,
        },
        "bbox": (
            None
            if cfg.bbox is None
            else {
                "lat_min": cfg.bbox.lat_min,
                "lon_min": cfg.bbox.lon_min,
                "lat_max": cfg.bbox.lat_max,
                "lon_max": cfg.bbox.lon_max,
            }
        ),
        "train": {
            "epochs": train.epochs,
            "seed": train.seed,
            "batch_size": train.batch_size,
            "crop_size": train.crop_size,
            "learning_rate": train.learning_rate,
            "lr_decay_epoch": train.lr_decay_epoch,
            "lr_decay_factor": train.lr_decay_factor,
            "weights": {
                "lambda_r": train.weights.lambda_r,
                "lambda_p": train.weights.lambda_p,
                "lambda_w": train.weights.lambda_w,
                "lambda_s": train.weights.lambda_s,
            },
            "checkpoint_dir": train.checkpoint_dir,
            "flow_spec": _spec_dict(train.flow_spec),
            "refine_spec": (
                None if train.refine_spec is None else _spec_dict(train.refine_spec)
            ),
        },
        "sim": {
            "dt_seconds": cfg.sim.dt_seconds,
            "infiltration_mm_per_hr": cfg.sim.infiltration_mm_per_hr,
            "routing_coefficient": cfg.sim.routing_coefficient,
            "sim_hours": cfg.sim.sim_hours,
        },
        "methods": list(cfg.methods),
        "seed": cfg.seed,
    }


def config_from_dict(raw: dict) -> RunConfig:
    try:
        paths = raw["paths"]
        train_raw = raw.get("train", {})
        spec_raw = train_raw.get("flow_spec")
        flow_spec = (
            UNetSpec(
                levels=spec_raw["levels"],
                channels_per_level=tuple(spec_raw["channels_per_level"]),
                activation_slope=spec_raw["activation_slope"],
            )
            if spec_raw
            else UNetSpec()
        )
        refine_raw = train_raw.get("refine_spec")
        refine_spec = (
            UNetSpec(
                levels=refine_raw["levels"],
                channels_per_level=tuple(refine_raw["channels_per_level"]),
                activation_slope=refine_raw["activation_slope"],
            )
            if refine_raw
            else None
        )
        weights_raw = train_raw.get("weights", {})
        train = TrainConfig(
            epochs=train_raw.get("epochs", 20),
            seed=train_raw.get("seed", 0),
            batch_size=train_raw.get("batch_size", 4),
            crop_size=train_raw.get("crop_size", 128),
            learning_rate=train_raw.get("learning_rate", 1e-4),
            lr_decay_epoch=train_raw.get("lr_decay_epoch"),
            lr_decay_factor=train_raw.get("lr_decay_factor", 0.2),
            weights=LossWeights(
                lambda_r=weights_raw.get("lambda_r", 0.8),
                lambda_p=weights_raw.get("lambda_p", 0.0),
                lambda_w=weights_raw.get("lambda_w", 0.4),
                lambda_s=weights_raw.get("lambda_s", 1.0),
            ),
            checkpoint_dir=train_raw.get("checkpoint_dir"),
            flow_spec=flow_spec,
            refine_spec=refine_spec,
        )
        sim_raw = raw.get("sim", {})
        sim = SimConfig(
            dt_seconds=sim_raw.get("dt_seconds", 300.0),
            infiltration_mm_per_hr=sim_raw.get("infiltration_mm_per_hr", 0.0),
            routing_coefficient=sim_raw.get("routing_coefficient", 0.1),
            sim_hours=sim_raw.get("sim_hours"),
        )
        bbox_raw = raw.get("bbox")
        bbox = (
            None
            if bbox_raw is None
            else BBox(
                lat_min=bbox_raw["lat_min"],
                lon_min=bbox_raw["lon_min"],
                lat_max=bbox_raw["lat_max"],
                lon_max=bbox_raw["lon_max"],
            )
        )
        return RunConfig(
            radar_manifest=paths["radar_manifest"],
            dem=paths["dem"],
            out_dir=paths["out_dir"],
            bbox=bbox,
            train=train,
            sim=sim,
            methods=list(raw.get("methods", ["linear", "model"])),
            seed=raw.get("seed", 0),
        )
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"invalid run config: {exc}") from exc


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True)


def load_config(path, check_paths: bool = True) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ManifestError(f"cannot read config {path}: {exc}") from exc
    cfg = config_from_dict(raw)
    if check_paths:
        for name, p in (("radar_manifest", cfg.radar_manifest), ("dem", cfg.dem)):
            if not Path(p).exists():
                raise ManifestError(f"config path {name} does not exist: {p}")
    return cfg


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))
