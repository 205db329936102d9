"""Differentiable backward warping and warped-frame fusion.

The tensor-level functions (suffix ``_t``) operate on torch tensors shaped
``(..., H, W)`` (flows as ``(..., 3, H, W)``) and carry gradients; they are what
the network and the training loop consume.  The array-level functions take the
georeferenced domain types and return numpy arrays.

Sampling convention: writing output cell ``(y, x)`` reads the source image at
``(y - dy, x - dx)`` with bilinear weights; out-of-bounds sample locations are
clamped to the border.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ShapeMismatch, TOutOfRange
from .grids import GridMeta

ALPHA_EPS = 1e-12


@dataclass(frozen=True)
class FlowField3:
    """Per-pixel displacement (cells) plus intensity change: (dx, dy, dz)."""

    meta: GridMeta
    dx: np.ndarray
    dy: np.ndarray
    dz: np.ndarray

    def __post_init__(self):
        shape = (self.meta.rows, self.meta.cols)
        for name in ("dx", "dy", "dz"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != shape:
                raise ShapeMismatch(f"{name} shape {a.shape} != grid {shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, a)

    @classmethod
    def zeros(cls, meta: GridMeta) -> "FlowField3":
        z = np.zeros((meta.rows, meta.cols))
        return cls(meta=meta, dx=z, dy=z.copy(), dz=z.copy())

    def as_tensor(self) -> torch.Tensor:
        """Stack to a (3, H, W) float64 tensor in (dx, dy, dz) order."""
        return torch.from_numpy(np.stack([self.dx, self.dy, self.dz]))

    @classmethod
    def from_tensor(cls, meta: GridMeta, t: torch.Tensor) -> "FlowField3":
        a = t.detach().cpu().numpy()
        return cls(meta=meta, dx=a[0], dy=a[1], dz=a[2])


@dataclass(frozen=True)
class VisibilityMap:
    """Occlusion weight of the first reference frame, per pixel in [0, 1]."""

    meta: GridMeta
    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64)
        if v.shape != (self.meta.rows, self.meta.cols):
            raise ShapeMismatch("visibility shape does not match grid")
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("visibility values must lie in [0, 1]")
        object.__setattr__(self, "v", v)


@dataclass(frozen=True)
class FusionWeights:
    """Convex per-pixel weight of the first warped frame."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("fusion weights must lie in [0, 1]")
        object.__setattr__(self, "alpha", a)


def backward_warp_2d_t(image: torch.Tensor, dx: torch.Tensor, dy: torch.Tensor) -> torch.Tensor:
    """Bilinear backward warp of ``image`` by the 2D flow, clamp-to-border."""
    if image.shape != dx.shape or image.shape != dy.shape:
        raise ShapeMismatch("image and flow channels must share a shape")
    h, w = image.shape[-2:]
    ys = torch.arange(h, dtype=image.dtype, device=image.device).view(h, 1)
    xs = torch.arange(w, dtype=image.dtype, device=image.device).view(1, w)
    gx = (xs - dx).clamp(0.0, w - 1.0)
    gy = (ys - dy).clamp(0.0, h - 1.0)
    x0 = gx.detach().floor().clamp(0, max(w - 2, 0))
    y0 = gy.detach().floor().clamp(0, max(h - 2, 0))
    tx = gx - x0
    ty = gy - y0
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    lead = image.shape[:-2]
    flat = image.reshape(*lead, h * w)

    def take(yy, xx):
        idx = (yy * w + xx).reshape(*lead, h * w)
        return flat.gather(-1, idx).reshape(image.shape)

    return (
        take(y0, x0) * (1 - ty) * (1 - tx)
        + take(y0, x1) * (1 - ty) * tx
        + take(y1, x0) * ty * (1 - tx)
        + take(y1, x1) * ty * tx
    )


def backward_warp_3d_t(
    image: torch.Tensor, flow: torch.Tensor, clamp_negative: bool = False
) -> torch.Tensor:
    """Backward warp with intensity change: samples ``image + dz`` at the
    displaced locations.  ``flow`` is (..., 3, H, W).  The optional clamp keeps
    emitted fields physically non-negative; the loss path leaves it off so
    gradients stay informative.
    """
    dx = flow[..., 0, :, :]
    dy = flow[..., 1, :, :]
    dz = flow[..., 2, :, :]
    out = backward_warp_2d_t(image + dz, dx, dy)
    if clamp_negative:
        out = out.clamp(min=0.0)
    return out


def approx_intermediate_flows_t(
    f01: torch.Tensor, f10: torch.Tensor, t: float
) -> tuple:
    """Quadratic-in-t linear fusion of the bidirectional flows, all channels."""
    if not 0.0 < t < 1.0:
        raise TOutOfRange(f"t must lie strictly in (0, 1), got {t}")
    ft0 = -(1.0 - t) * t * f01 + t * t * f10
    ft1 = (1.0 - t) ** 2 * f01 - t * (1.0 - t) * f10
    return ft0, ft1


def fuse_frames_t(
    w0: torch.Tensor, w1: torch.Tensor, v0: torch.Tensor, t: float
) -> tuple:
    """Visibility-weighted convex fusion of the two warped frames (alpha rule)."""
    num = (1.0 - t) * v0
    den = num + t * (1.0 - v0)
    alpha = num / den.clamp(min=ALPHA_EPS)
    fused = alpha * w0 + (1.0 - alpha) * w1
    return fused, alpha


def _check_aligned(meta_a: GridMeta, meta_b: GridMeta):
    if not meta_a.aligned(meta_b):
        raise ShapeMismatch("grids are not aligned")


def backward_warp_2d(image: np.ndarray, flow: FlowField3) -> np.ndarray:
    """Array-level backward warp; ``dz`` is ignored."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (flow.meta.rows, flow.meta.cols):
        raise ShapeMismatch("image shape does not match flow grid")
    out = backward_warp_2d_t(
        torch.from_numpy(image), torch.from_numpy(flow.dx), torch.from_numpy(flow.dy)
    )
    return out.numpy()


def backward_warp_3d(
    image: np.ndarray, flow: FlowField3, clamp_negative: bool = True
) -> np.ndarray:
    """Array-level backward warp with the intensity-change channel applied."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (flow.meta.rows, flow.meta.cols):
        raise ShapeMismatch("image shape does not match flow grid")
    out = backward_warp_3d_t(
        torch.from_numpy(image), flow.as_tensor(), clamp_negative=clamp_negative
    )
    return out.numpy()


def approx_intermediate_flows(f01: FlowField3, f10: FlowField3, t: float) -> tuple:
    _check_aligned(f01.meta, f10.meta)
    ft0, ft1 = approx_intermediate_flows_t(f01.as_tensor(), f10.as_tensor(), t)
    return (
        FlowField3.from_tensor(f01.meta, ft0),
        FlowField3.from_tensor(f01.meta, ft1),
    )


def fuse_frames(
    w0: np.ndarray, w1: np.ndarray, v0: VisibilityMap, t: float
) -> tuple:
    """Fuse two warped frames; returns the fused grid and the FusionWeights."""
    w0 = np.asarray(w0, dtype=np.float64)
    w1 = np.asarray(w1, dtype=np.float64)
    shape = (v0.meta.rows, v0.meta.cols)
    if w0.shape != shape or w1.shape != shape:
        raise ShapeMismatch("warped frames do not match the visibility grid")
    fused, alpha = fuse_frames_t(
        torch.from_numpy(w0), torch.from_numpy(w1), torch.from_numpy(v0.v), t
    )
    return fused.numpy(), FusionWeights(alpha=alpha.numpy())
