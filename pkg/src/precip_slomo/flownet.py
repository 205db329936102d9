"""The two U-Nets: bidirectional 3D flow, topo-aware refinement, and the
end-to-end interpolation forward pass.

U-Net 1 maps the two normalized frames (2 channels) to two 3-channel flows
(dx, dy, dz).  U-Net 2 consumes 13 channels — the two frames, the two warped
frames, the two approximate flows, and three topographic channels — and emits
two 3-channel flow residuals plus one visibility logit.  Final layers are
zero-initialized so a fresh network is the identity-ish operator: flows are
zero and the visibility is uniformly 0.5.

All tensors are channel-first: frames ``(B, H, W)``, flows ``(B, 3, H, W)``.
The dz channel lives in normalized (log1p) space inside the pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import (
    MisalignedDem,
    NonFiniteLoss,
    ShapeMismatch,
    TOutOfRange,
    UninitializedParams,
)
from .grids import (
    Dem,
    GridMeta,
    PrecipFrame,
    affine_timestamp,
    denormalize_precip,
    normalize_precip,
    resample_to,
    terrain_gradient,
)
from .warping import (
    FlowField3,
    VisibilityMap,
    approx_intermediate_flows_t,
    backward_warp_3d_t,
    fuse_frames_t,
)

CHECKPOINT_VERSION = "precip-slomo-ckpt-1"


@dataclass(frozen=True)
class UNetSpec:
    """Shape of one U-Net: encoder depth and channel widths (decoder mirrors)."""

    levels: int = 6
    channels_per_level: tuple = (32, 64, 128, 256, 512, 512)
    activation_slope: float = 0.1

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if len(self.channels_per_level) != self.levels:
            raise ValueError("channels_per_level must list every level")
        object.__setattr__(self, "channels_per_level", tuple(self.channels_per_level))

    @property
    def divisor(self) -> int:
        return 2 ** (self.levels - 1)


def _kernel_for_level(level: int) -> int:
    # Wide receptive field at full resolution, cheap 3x3 below.
    return 7 if level == 0 else (5 if level == 1 else 3)


class _ConvBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, slope: float):
        super().__init__()
        pad = kernel // 2
        self.c1 = nn.Conv2d(in_ch, out_ch, kernel, padding=pad)
        self.c2 = nn.Conv2d(out_ch, out_ch, kernel, padding=pad)
        self.slope = slope

    def forward(self, x):
        x = F.leaky_relu(self.c1(x), self.slope)
        return F.leaky_relu(self.c2(x), self.slope)


class UNet(nn.Module):
    """Fully convolutional encoder/decoder with skip connections."""

    def __init__(self, spec: UNetSpec, in_channels: int, out_channels: int):
        super().__init__()
        self.spec = spec
        self.in_channels = in_channels
        self.out_channels = out_channels
        ch = spec.channels_per_level
        self.encoders = nn.ModuleList()
        prev = in_channels
        for lvl in range(spec.levels):
            self.encoders.append(
                _ConvBlock(prev, ch[lvl], _kernel_for_level(lvl), spec.activation_slope)
            )
            prev = ch[lvl]
        self.decoders = nn.ModuleList()
        for lvl in range(spec.levels - 2, -1, -1):
            self.decoders.append(
                _ConvBlock(prev + ch[lvl], ch[lvl], 3, spec.activation_slope)
            )
            prev = ch[lvl]
        self.head = nn.Conv2d(prev, out_channels, 1)

    def forward(self, x):
        skips = []
        for lvl, enc in enumerate(self.encoders):
            if lvl > 0:
                x = F.avg_pool2d(x, 2)
            x = enc(x)
            skips.append(x)
        for dec, skip in zip(self.decoders, reversed(skips[:-1])):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = dec(torch.cat([x, skip], dim=1))
        return self.head(x)


def _init_unet(net: UNet, gen: torch.Generator):
    """Fan-in-scaled normal init everywhere, zero final layer."""
    slope = net.spec.activation_slope
    gain = math.sqrt(2.0 / (1.0 + slope * slope))
    for mod in net.modules():
        if isinstance(mod, nn.Conv2d):
            fan_in = mod.in_channels * mod.kernel_size[0] * mod.kernel_size[1]
            std = gain / math.sqrt(fan_in)
            with torch.no_grad():
                mod.weight.copy_(
                    torch.randn(mod.weight.shape, generator=gen) * std
                )
                mod.bias.zero_()
    with torch.no_grad():
        net.head.weight.zero_()
        net.head.bias.zero_()


DEFAULT_FLOW_SPEC = UNetSpec()
DEFAULT_REFINE_SPEC = UNetSpec()


@dataclass
class ModelParams:
    """Both networks plus the normalization contract and a format tag."""

    flow_spec: UNetSpec
    refine_spec: UNetSpec
    flow_net: UNet
    refine_net: UNet
    norm_stats: dict = field(default_factory=lambda: {"scheme": "log1p"})
    version: str = CHECKPOINT_VERSION


def init_params(
    flow_spec: UNetSpec = DEFAULT_FLOW_SPEC,
    refine_spec: Optional[UNetSpec] = None,
    seed: int = 0,
) -> ModelParams:
    """Build freshly initialized networks from a seeded generator."""
    refine_spec = refine_spec if refine_spec is not None else flow_spec
    gen = torch.Generator().manual_seed(int(seed))
    flow_net = UNet(flow_spec, in_channels=2, out_channels=6)
    refine_net = UNet(refine_spec, in_channels=13, out_channels=7)
    _init_unet(flow_net, gen)
    _init_unet(refine_net, gen)
    return ModelParams(
        flow_spec=flow_spec,
        refine_spec=refine_spec,
        flow_net=flow_net,
        refine_net=refine_net,
    )


def _check_params(params: ModelParams):
    if params is None or params.flow_net is None or params.refine_net is None:
        raise UninitializedParams("model parameters are not initialized")


def _run_padded(net: UNet, x: torch.Tensor) -> torch.Tensor:
    """Pad spatial dims up to a multiple of the U-Net divisor, run, crop back."""
    h, w = x.shape[-2:]
    div = net.spec.divisor
    ph = (-h) % div
    pw = (-w) % div
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="replicate")
    y = net(x)
    return y[..., :h, :w]


def flows_t(params: ModelParams, n0: torch.Tensor, n1: torch.Tensor) -> tuple:
    """U-Net 1 forward: (B,H,W) frames -> two (B,3,H,W) flows."""
    _check_params(params)
    if n0.shape != n1.shape:
        raise ShapeMismatch("input frames must share a shape")
    x = torch.stack([n0, n1], dim=1)
    y = _run_padded(params.flow_net, x)
    return y[:, 0:3], y[:, 3:6]


def topo_t(
    dem_norm: torch.Tensor,
    grad_x: torch.Tensor,
    grad_y: torch.Tensor,
    f01: torch.Tensor,
    f10: torch.Tensor,
) -> torch.Tensor:
    """Stack (dem_norm, dot_fwd, dot_bwd) into a (B,3,H,W) channel block."""
    dot_fwd = f01[:, 0] * grad_x + f01[:, 1] * grad_y
    dot_bwd = f10[:, 0] * grad_x + f10[:, 1] * grad_y
    if dem_norm.dim() == 2:
        dem_norm = dem_norm.unsqueeze(0).expand_as(dot_fwd)
    return torch.stack([dem_norm, dot_fwd, dot_bwd], dim=1)


def refine_t(
    params: ModelParams,
    n0: torch.Tensor,
    n1: torch.Tensor,
    w0: torch.Tensor,
    w1: torch.Tensor,
    ft0: torch.Tensor,
    ft1: torch.Tensor,
    topo: torch.Tensor,
) -> tuple:
    """U-Net 2 forward: 13 input channels -> refined flows and visibility."""
    _check_params(params)
    x = torch.cat(
        [
            n0.unsqueeze(1),
            n1.unsqueeze(1),
            w0.unsqueeze(1),
            w1.unsqueeze(1),
            ft0,
            ft1,
            topo,
        ],
        dim=1,
    )
    y = _run_padded(params.refine_net, x)
    rt0 = ft0 + y[:, 0:3]
    rt1 = ft1 + y[:, 3:6]
    v0 = torch.sigmoid(y[:, 6])
    return rt0, rt1, v0


@dataclass
class PipelineFields:
    """Every intermediate of one interpolation forward pass (torch tensors)."""

    f01: torch.Tensor
    f10: torch.Tensor
    ft0: torch.Tensor
    ft1: torch.Tensor
    w0: torch.Tensor
    w1: torch.Tensor
    rt0: torch.Tensor
    rt1: torch.Tensor
    v0: torch.Tensor
    alpha: torch.Tensor
    pred: torch.Tensor  # normalized, unclamped


def interpolate_fields(
    params: ModelParams,
    n0: torch.Tensor,
    n1: torch.Tensor,
    dem_norm: torch.Tensor,
    grad_x: torch.Tensor,
    grad_y: torch.Tensor,
    t: float,
) -> PipelineFields:
    """Full differentiable pipeline on normalized (B,H,W) frames."""
    if not 0.0 < t < 1.0:
        raise TOutOfRange(f"t must lie strictly in (0, 1), got {t}")
    f01, f10 = flows_t(params, n0, n1)
    # non-finite flows would index garbage inside the warp's gather
    if not (torch.isfinite(f01).all() and torch.isfinite(f10).all()):
        raise NonFiniteLoss("flow network produced non-finite values")
    ft0, ft1 = approx_intermediate_flows_t(f01, f10, t)
    w0 = backward_warp_3d_t(n0, ft0)
    w1 = backward_warp_3d_t(n1, ft1)
    topo = topo_t(dem_norm, grad_x, grad_y, f01, f10)
    rt0, rt1, v0 = refine_t(params, n0, n1, w0, w1, ft0, ft1, topo)
    if not (torch.isfinite(rt0).all() and torch.isfinite(rt1).all()):
        raise NonFiniteLoss("refinement network produced non-finite values")
    rw0 = backward_warp_3d_t(n0, rt0)
    rw1 = backward_warp_3d_t(n1, rt1)
    pred, alpha = fuse_frames_t(rw0, rw1, v0, t)
    return PipelineFields(
        f01=f01, f10=f10, ft0=ft0, ft1=ft1, w0=w0, w1=w1,
        rt0=rt0, rt1=rt1, v0=v0, alpha=alpha, pred=pred,
    )


@dataclass(frozen=True)
class TopoChannels:
    """DEM-derived input channels for the refinement network."""

    dem_norm: np.ndarray
    dot_fwd: np.ndarray
    dot_bwd: np.ndarray


def normalize_dem(dem: Dem) -> np.ndarray:
    """Elevation rescaled to [0, 1]; identically 0 for a flat DEM."""
    h = dem.elevation
    span = float(h.max() - h.min())
    if span <= 0:
        return np.zeros_like(h)
    return (h - h.min()) / span


def dem_for_grid(dem: Dem, meta: GridMeta) -> Dem:
    """Resample the DEM onto ``meta`` and populate gradients."""
    if not dem.meta.aligned(meta):
        dem = resample_to(dem, meta)
    if dem.grad_x is None or dem.grad_y is None:
        dem = terrain_gradient(dem)
    return dem


def build_topo_channels(dem: Dem, f01: FlowField3, f10: FlowField3) -> TopoChannels:
    """Dot-product collision features plus the normalized elevation channel."""
    if not dem.meta.aligned(f01.meta) or not dem.meta.aligned(f10.meta):
        raise MisalignedDem("DEM must be resampled to the flow grid first")
    if dem.grad_x is None or dem.grad_y is None:
        dem = terrain_gradient(dem)
    return TopoChannels(
        dem_norm=normalize_dem(dem),
        dot_fwd=f01.dx * dem.grad_x + f01.dy * dem.grad_y,
        dot_bwd=f10.dx * dem.grad_x + f10.dy * dem.grad_y,
    )


def compute_bidirectional_flow(
    params: ModelParams, i0: np.ndarray, i1: np.ndarray, meta: GridMeta
) -> tuple:
    """Array-level U-Net 1 forward pass on normalized frames."""
    _check_params(params)
    i0 = np.asarray(i0, dtype=np.float32)
    i1 = np.asarray(i1, dtype=np.float32)
    if i0.shape != (meta.rows, meta.cols) or i1.shape != i0.shape:
        raise ShapeMismatch("frames do not match the grid")
    with torch.no_grad():
        f01, f10 = flows_t(
            params, torch.from_numpy(i0).unsqueeze(0), torch.from_numpy(i1).unsqueeze(0)
        )
    return (
        FlowField3.from_tensor(meta, f01[0].double()),
        FlowField3.from_tensor(meta, f10[0].double()),
    )


def refine(
    params: ModelParams,
    i0: np.ndarray,
    i1: np.ndarray,
    warped0: np.ndarray,
    warped1: np.ndarray,
    ft0: FlowField3,
    ft1: FlowField3,
    topo: TopoChannels,
    t: float,
) -> tuple:
    """Array-level U-Net 2 forward pass; returns refined flows and v0."""
    _check_params(params)
    meta = ft0.meta

    def as_t(a):
        return torch.from_numpy(np.asarray(a, dtype=np.float32)).unsqueeze(0)

    topo_stack = torch.stack(
        [as_t(topo.dem_norm)[0], as_t(topo.dot_fwd)[0], as_t(topo.dot_bwd)[0]]
    ).unsqueeze(0)
    with torch.no_grad():
        rt0, rt1, v0 = refine_t(
            params,
            as_t(i0),
            as_t(i1),
            as_t(warped0),
            as_t(warped1),
            ft0.as_tensor().float().unsqueeze(0),
            ft1.as_tensor().float().unsqueeze(0),
            topo_stack,
        )
    return (
        FlowField3.from_tensor(meta, rt0[0].double()),
        FlowField3.from_tensor(meta, rt1[0].double()),
        VisibilityMap(meta=meta, v=v0[0].double().numpy()),
    )


def forward_interpolate(
    params: ModelParams, i0: PrecipFrame, i1: PrecipFrame, dem: Dem, t: float
) -> PrecipFrame:
    """Interpolate a physical precipitation frame at fractional time ``t``."""
    _check_params(params)
    if not 0.0 < t < 1.0:
        raise TOutOfRange(f"t must lie strictly in (0, 1), got {t}")
    if not i0.meta.aligned(i1.meta):
        raise ShapeMismatch("input frames are not aligned")
    dem = dem_for_grid(dem, i0.meta)
    n0 = normalize_precip(i0).astype(np.float32)
    n1 = normalize_precip(i1).astype(np.float32)
    dem_norm = torch.from_numpy(normalize_dem(dem).astype(np.float32))
    gx = torch.from_numpy(dem.grad_x.astype(np.float32)).unsqueeze(0)
    gy = torch.from_numpy(dem.grad_y.astype(np.float32)).unsqueeze(0)
    with torch.no_grad():
        fields = interpolate_fields(
            params,
            torch.from_numpy(n0).unsqueeze(0),
            torch.from_numpy(n1).unsqueeze(0),
            dem_norm,
            gx,
            gy,
            t,
        )
    pred = denormalize_precip(fields.pred[0].double().numpy())
    missing = i0.missing_mask | i1.missing_mask
    values = np.where(missing, 0.0, np.maximum(pred, 0.0))
    return PrecipFrame(
        meta=i0.meta,
        timestamp=affine_timestamp(i0.timestamp, i1.timestamp, t),
        values=values,
        missing_mask=missing,
    )
