"""Self-supervised training: triplet construction from coarse samples,
seeded shuffled epochs, Adam updates, and per-epoch checkpointing.

The middle frame of each 30-minute triplet is the supervision target
(t = 0.5).  Each step takes a seeded random square crop so desk-scale memory
stays bounded; fully convolutional nets generalize across sizes at inference.
"""

from __future__ import annotations

import json
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch

from .errors import (
    CorruptCheckpoint,
    DivergedLoss,
    NonFiniteLoss,
    SeriesTooShort,
)
from .flownet import (
    CHECKPOINT_VERSION,
    DEFAULT_FLOW_SPEC,
    ModelParams,
    UNet,
    UNetSpec,
    dem_for_grid,
    interpolate_fields,
    normalize_dem,
)
from .grids import Dem, FrameSeries, PrecipFrame
from .losses import (
    LossParts,
    LossWeights,
    reconstruction_loss,
    smoothness_loss,
    total_loss,
    warping_loss,
)


@dataclass(frozen=True)
class Triplet:
    """Three consecutive coarse frames; the middle one is the target."""

    i0: PrecipFrame
    i_mid: PrecipFrame
    i1: PrecipFrame
    t_mid: float = 0.5
    crop_window: Optional[tuple] = None  # (row0, col0, size)

    def __post_init__(self):
        gap0 = self.i_mid.timestamp - self.i0.timestamp
        gap1 = self.i1.timestamp - self.i_mid.timestamp
        if gap0 != gap1:
            raise ValueError("triplet timestamps must be equally spaced")
        if self.t_mid != 0.5:
            raise ValueError("the middle frame sits at t = 0.5 by construction")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    seed: int = 0
    batch_size: int = 4
    crop_size: int = 128
    learning_rate: float = 1e-4
    lr_decay_epoch: Optional[int] = None  # no schedule unless set
    lr_decay_factor: float = 0.2
    weights: LossWeights = field(default_factory=LossWeights)
    checkpoint_dir: Optional[str] = None
    flow_spec: UNetSpec = DEFAULT_FLOW_SPEC
    refine_spec: Optional[UNetSpec] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.crop_size % self.flow_spec.divisor != 0:
            raise ValueError(
                f"crop_size must be a multiple of {self.flow_spec.divisor} "
                f"for a {self.flow_spec.levels}-level U-Net"
            )


def build_triplets(series: FrameSeries) -> List[Triplet]:
    """Sliding window of 3 consecutive frames, stride 1.  Triplets whose
    middle frame is fully missing are dropped."""
    if series.step_minutes != 30:
        raise ValueError("triplets are built from a 30-minute series")
    if len(series) < 3:
        raise SeriesTooShort("need at least 3 frames to form a triplet")
    out = []
    for k in range(len(series) - 2):
        mid = series.frames[k + 1]
        if mid.missing_mask.all():
            continue
        out.append(Triplet(i0=series.frames[k], i_mid=mid, i1=series.frames[k + 2]))
    return out


def save_checkpoint(params: ModelParams, path) -> None:
    """Serialize both networks to a single npz archive, bit-exactly."""
    header = {
        "version": params.version,
        "flow_spec": _spec_to_dict(params.flow_spec),
        "refine_spec": _spec_to_dict(params.refine_spec),
        "norm_stats": params.norm_stats,
        "flow_keys": list(params.flow_net.state_dict().keys()),
        "refine_keys": list(params.refine_net.state_dict().keys()),
    }
    arrays = {"header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for prefix, net in (("flow", params.flow_net), ("refine", params.refine_net)):
        for i, (_, tensor) in enumerate(net.state_dict().items()):
            arrays[f"{prefix}_{i:04d}"] = tensor.detach().cpu().numpy()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)


def _spec_to_dict(spec: UNetSpec) -> dict:
    return {
        "levels": spec.levels,
        "channels_per_level": list(spec.channels_per_level),
        "activation_slope": spec.activation_slope,
    }


def _spec_from_dict(d: dict) -> UNetSpec:
    return UNetSpec(
        levels=d["levels"],
        channels_per_level=tuple(d["channels_per_level"]),
        activation_slope=d["activation_slope"],
    )


def load_checkpoint(path) -> ModelParams:
    """Rebuild ModelParams from a checkpoint archive."""
    try:
        with np.load(path) as data:
            header = json.loads(bytes(data["header"]).decode())
            if header.get("version") != CHECKPOINT_VERSION:
                raise CorruptCheckpoint(
                    f"unsupported checkpoint version {header.get('version')!r}"
                )
            flow_spec = _spec_from_dict(header["flow_spec"])
            refine_spec = _spec_from_dict(header["refine_spec"])
            flow_net = UNet(flow_spec, in_channels=2, out_channels=6)
            refine_net = UNet(refine_spec, in_channels=13, out_channels=7)
            _load_state(flow_net, header["flow_keys"], data, "flow")
            _load_state(refine_net, header["refine_keys"], data, "refine")
    except CorruptCheckpoint:
        raise
    except (OSError, KeyError, ValueError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc
    return ModelParams(
        flow_spec=flow_spec,
        refine_spec=refine_spec,
        flow_net=flow_net,
        refine_net=refine_net,
        norm_stats=header["norm_stats"],
        version=header["version"],
    )


def _load_state(net: UNet, keys: Sequence[str], data, prefix: str):
    state = {}
    for i, key in enumerate(keys):
        arr = data[f"{prefix}_{i:04d}"]
        state[key] = torch.from_numpy(arr.copy())
    expected = net.state_dict()
    for key, tensor in state.items():
        if key not in expected or expected[key].shape != tensor.shape:
            raise CorruptCheckpoint(f"parameter {key} has unexpected shape")
    net.load_state_dict(state)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    wall_seconds: float


def _triplet_tensors(
    triplets: Sequence[Triplet],
    indices: Sequence[int],
    crops: Sequence[tuple],
    dem_norm: np.ndarray,
    grad_x: np.ndarray,
    grad_y: np.ndarray,
):
    """Assemble a (B,H,W) batch of normalized crops plus masks and DEM slices."""
    n0s, nts, n1s, masks, dns, gxs, gys = [], [], [], [], [], [], []
    for idx, (r0, c0, size) in zip(indices, crops):
        trip = triplets[idx]
        rs, cs = slice(r0, r0 + size), slice(c0, c0 + size)
        frames = (trip.i0, trip.i_mid, trip.i1)
        crops_n = [
            np.log1p(np.where(f.missing_mask, 0.0, f.values))[rs, cs] for f in frames
        ]
        valid = ~(
            frames[0].missing_mask[rs, cs]
            | frames[1].missing_mask[rs, cs]
            | frames[2].missing_mask[rs, cs]
        )
        n0s.append(crops_n[0])
        nts.append(crops_n[1])
        n1s.append(crops_n[2])
        masks.append(valid)
        dns.append(dem_norm[rs, cs])
        gxs.append(grad_x[rs, cs])
        gys.append(grad_y[rs, cs])

    def stack(parts, dtype=np.float32):
        return torch.from_numpy(np.stack(parts).astype(dtype))

    return (
        stack(n0s),
        stack(nts),
        stack(n1s),
        torch.from_numpy(np.stack(masks)),
        stack(dns),
        stack(gxs),
        stack(gys),
    )


def training_step_loss(
    params: ModelParams,
    n0: torch.Tensor,
    nt: torch.Tensor,
    n1: torch.Tensor,
    mask: torch.Tensor,
    dem_norm: torch.Tensor,
    grad_x: torch.Tensor,
    grad_y: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """One forward pass through the full pipeline and the composite loss."""
    fields = interpolate_fields(params, n0, n1, dem_norm, grad_x, grad_y, t=0.5)
    parts = LossParts(
        reconstruction=reconstruction_loss(fields.pred, nt, mask),
        warping=warping_loss(
            n0, n1, nt, fields.f01, fields.f10, fields.ft0, fields.ft1, mask
        ),
        smoothness=smoothness_loss(fields.f01, fields.f10),
    )
    return total_loss(parts, weights)


def train(
    config: TrainConfig,
    triplets: Sequence[Triplet],
    dem: Dem,
    params: Optional[ModelParams] = None,
) -> tuple:
    """Run the self-supervised loop; returns (final params, per-epoch log).

    A non-finite loss aborts with :class:`DivergedLoss`; checkpoints written
    for completed epochs remain on disk.
    """
    from .flownet import init_params

    if not triplets:
        raise ValueError("training requires a non-empty triplet list")
    meta = triplets[0].i0.meta
    dem = dem_for_grid(dem, meta)
    dem_norm = normalize_dem(dem)
    torch.manual_seed(int(config.seed))
    if params is None:
        params = init_params(
            flow_spec=config.flow_spec,
            refine_spec=config.refine_spec,
            seed=config.seed,
        )
    opt = torch.optim.Adam(
        list(params.flow_net.parameters()) + list(params.refine_net.parameters()),
        lr=config.learning_rate,
    )
    crop = min(config.crop_size, meta.rows, meta.cols)
    crop -= crop % config.flow_spec.divisor
    crop = max(crop, min(config.flow_spec.divisor, meta.rows, meta.cols))
    log: List[EpochRecord] = []
    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    log_path = ckpt_dir / "train_log.jsonl" if ckpt_dir else None
    if log_path:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        log_path.write_text("")
    for epoch in range(config.epochs):
        started = time.monotonic()
        if config.lr_decay_epoch is not None and epoch == config.lr_decay_epoch:
            for group in opt.param_groups:
                group["lr"] *= config.lr_decay_factor
        rng = np.random.default_rng([int(config.seed), epoch])
        order = rng.permutation(len(triplets))
        losses = []
        for lo in range(0, len(order), config.batch_size):
            batch_idx = order[lo : lo + config.batch_size]
            crops = [
                (
                    int(rng.integers(0, meta.rows - crop + 1)),
                    int(rng.integers(0, meta.cols - crop + 1)),
                    crop,
                )
                for _ in batch_idx
            ]
            tensors = _triplet_tensors(
                triplets, batch_idx, crops, dem_norm, dem.grad_x, dem.grad_y
            )
            try:
                loss = training_step_loss(params, *tensors, weights=config.weights)
            except NonFiniteLoss as exc:
                raise DivergedLoss(
                    f"non-finite loss at epoch {epoch}; last checkpoint retained"
                ) from exc
            if not torch.isfinite(loss):
                raise DivergedLoss(
                    f"non-finite loss at epoch {epoch}; last checkpoint retained"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        record = EpochRecord(
            epoch=epoch,
            mean_loss=float(np.mean(losses)),
            wall_seconds=time.monotonic() - started,
        )
        log.append(record)
        if ckpt_dir:
            save_checkpoint(params, ckpt_dir / f"epoch_{epoch:03d}.npz")
            with open(log_path, "a") as fh:
                fh.write(
                    json.dumps(
                        {
                            "epoch": record.epoch,
                            "mean_loss": record.mean_loss,
                            "wall_seconds": record.wall_seconds,
                        }
                    )
                    + "\n"
                )
    return params, log
