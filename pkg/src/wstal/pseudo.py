"""Uncertainty-weighted self-training between the main and fused CAMs.

Both CAMs pass through the same shared classification head; per segment the
KL divergence between their class posteriors measures disagreement. Segments
where the two branches disagree get exponentially down-weighted in the
cross-entropy term, and a small variance penalty keeps the divergence itself
from growing unchecked.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor


@dataclass
class PseudoConfig:
    variance_weight: float = 0.001  # rho
    eps: float = 1e-8
    detach_targets: bool = False

    def __post_init__(self):
        if self.variance_weight < 0:
            raise ValueError("variance_weight must be >= 0")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


def segment_probs(cam: Tensor, eps: float = 1e-8) -> Tensor:
    """Per-segment class posteriors: row softmax clamped away from zero."""
    return torch.softmax(cam, dim=-1).clamp(min=eps)


def uncertainty(cam: Tensor, pseudo_cam: Tensor, eps: float = 1e-8) -> Tensor:
    """Per-segment KL divergence KL(p || p_hat) between the two CAM posteriors."""
    p = segment_probs(cam, eps)
    q = segment_probs(pseudo_cam, eps)
    return (p * (torch.log(p) - torch.log(q))).sum(dim=-1)


def pseudo_loss(cam: Tensor, pseudo_cam: Tensor, config: PseudoConfig) -> Tensor:
    """Mean over segments of weighted cross-entropy plus the variance penalty.

    The fused CAM provides the targets; the exp(-KL) weight is treated as a
    constant (detached), while the rho * KL term keeps its gradient.
    """
    p = segment_probs(cam, config.eps)
    q = segment_probs(pseudo_cam, config.eps)
    if config.detach_targets:
        q = q.detach()
    div = (p * (torch.log(p) - torch.log(q))).sum(dim=-1)
    weight = torch.exp(-div).detach()
    cross = -(q * torch.log(p)).sum(dim=-1)
    return (weight * cross + config.variance_weight * div).mean()
