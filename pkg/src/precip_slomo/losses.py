"""The composite self-supervised objective: reconstruction + warping +
smoothness, with a perceptual slot kept in the weight vector but disabled.

All terms operate in normalized (log1p) space and accept torch tensors
(gradient-carrying) or numpy arrays.  Shapes: frames ``(..., H, W)``, flows
``(..., 3, H, W)``, mask broadcastable to the frame shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import EmptyMask, NonFiniteLoss
from .warping import backward_warp_3d_t


@dataclass(frozen=True)
class LossWeights:
    """Weights of the four loss terms; the perceptual slot is forced to 0."""

    lambda_r: float = 0.8
    lambda_p: float = 0.0
    lambda_w: float = 0.4
    lambda_s: float = 1.0

    def __post_init__(self):
        for name in ("lambda_r", "lambda_p", "lambda_w", "lambda_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.lambda_p != 0.0:
            raise ValueError("the perceptual term is disabled; lambda_p must be 0")


@dataclass(frozen=True)
class LossParts:
    reconstruction: object
    warping: object
    smoothness: object
    perceptual: float = 0.0


def _as_tensor(a) -> torch.Tensor:
    if isinstance(a, torch.Tensor):
        return a
    return torch.from_numpy(np.asarray(a, dtype=np.float64))


def _masked_mean_abs(residual: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    mask = mask.to(residual.dtype)
    count = mask.sum()
    if count.item() == 0:
        raise EmptyMask("loss mask selects no cells")
    return (residual.abs() * mask).sum() / count


def reconstruction_loss(pred, target, mask) -> torch.Tensor:
    """Mean absolute difference over valid cells."""
    pred = _as_tensor(pred)
    return _masked_mean_abs(pred - _as_tensor(target), _as_tensor(mask))


def warping_loss(
    i0, i1, i_t, f01, f10, ft0, ft1, mask, include_intermediate: bool = True
) -> torch.Tensor:
    """Photometric quality of the flows: sum of masked-mean L1 terms
    |i0 - g(i1, f01)| + |i1 - g(i0, f10)| and, optionally, the two
    intermediate-frame terms against i_t.  g is the 3D backward warp.
    """
    i0, i1, i_t = _as_tensor(i0), _as_tensor(i1), _as_tensor(i_t)
    f01, f10 = _as_tensor(f01), _as_tensor(f10)
    mask = _as_tensor(mask)
    total = _masked_mean_abs(i0 - backward_warp_3d_t(i1, f01), mask)
    total = total + _masked_mean_abs(i1 - backward_warp_3d_t(i0, f10), mask)
    if include_intermediate:
        ft0, ft1 = _as_tensor(ft0), _as_tensor(ft1)
        total = total + _masked_mean_abs(i_t - backward_warp_3d_t(i0, ft0), mask)
        total = total + _masked_mean_abs(i_t - backward_warp_3d_t(i1, ft1), mask)
    return total


def _flow_tv(flow: torch.Tensor) -> torch.Tensor:
    """Per-channel mean |first difference| in x and y, summed over channels."""
    dx = flow[..., :, 1:] - flow[..., :, :-1]
    dy = flow[..., 1:, :] - flow[..., :-1, :]
    total = flow.new_zeros(())
    nch = flow.shape[-3]
    for c in range(nch):
        if dx.shape[-1] > 0:
            total = total + dx[..., c, :, :].abs().mean()
        if dy.shape[-2] > 0:
            total = total + dy[..., c, :, :].abs().mean()
    return total


def smoothness_loss(f01, f10) -> torch.Tensor:
    """First-difference L1 smoothness over both flows, all three channels."""
    return _flow_tv(_as_tensor(f01)) + _flow_tv(_as_tensor(f10))


def total_loss(parts: LossParts, weights: LossWeights) -> torch.Tensor:
    """Weighted sum of the loss terms; the perceptual slot contributes nothing
    when its weight is zero."""
    terms = [
        (weights.lambda_r, parts.reconstruction),
        (weights.lambda_w, parts.warping),
        (weights.lambda_s, parts.smoothness),
    ]
    if weights.lambda_p != 0.0:
        terms.append((weights.lambda_p, parts.perceptual))
    total = None
    for lam, part in terms:
        part = (
            part
            if isinstance(part, torch.Tensor)
            else torch.tensor(float(part), dtype=torch.float64)
        )
        if not torch.isfinite(part):
            raise NonFiniteLoss("loss term is not finite")
        contrib = lam * part
        total = contrib if total is None else total + contrib
    if not torch.isfinite(total):
        raise NonFiniteLoss("total loss is not finite")
    return total
