"""Baseline branch: embedding, shared CAM head, three-branch attention, top-k MIL.

All modules run in float64 so that finite-difference gradient checks are exact
to roundoff; the models are small enough that this costs nothing on CPU.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

BRANCHES = ("ins", "con", "back")
BRANCH_INDEX = {name: i for i, name in enumerate(BRANCHES)}

DTYPE = torch.float64


class ConfigError(Exception):
    """Raised for inconsistent training inputs (e.g. unlabeled training video)."""


class Embedder(nn.Module):
    """Temporal convolution + ReLU mapping backbone features to task embeddings."""

    def __init__(self, in_dim: int, embed_dim: int, depth: int = 1, kernel_size: int = 3):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd for same-length output")
        dims = [in_dim] + [embed_dim] * depth
        self.convs = nn.ModuleList(
            nn.Conv1d(dims[i], dims[i + 1], kernel_size, padding=kernel_size // 2, dtype=DTYPE)
            for i in range(depth)
        )

    def forward(self, x: Tensor) -> Tensor:
        """(T, D_in) or (B, T, D_in) -> same leading shape with embed_dim channels."""
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        x = x.transpose(1, 2)
        for conv in self.convs:
            x = torch.relu(conv(x))
        x = x.transpose(1, 2)
        return x.squeeze(0) if squeeze else x


class CamHead(nn.Module):
    """Single fully connected layer projecting embeddings to C+1 class activations.

    One instance is shared verbatim between the main branch and the pseudo-label
    branch; callers must pass the same object, never a copy.
    """

    def __init__(self, embed_dim: int, num_classes: int):
        super().__init__()
        self.num_classes = num_classes
        self.proj = nn.Linear(embed_dim, num_classes + 1, dtype=DTYPE)

    def forward(self, features: Tensor) -> Tensor:
        return self.proj(features)


class AttentionHead(nn.Module):
    """Temporal convolution (kernel 3) to three branch logits, softmaxed per segment."""

    def __init__(self, embed_dim: int, kernel_size: int = 3):
        super().__init__()
        self.conv = nn.Conv1d(embed_dim, 3, kernel_size, padding=kernel_size // 2, dtype=DTYPE)

    def forward(self, features: Tensor) -> Tensor:
        squeeze = features.dim() == 2
        if squeeze:
            features = features.unsqueeze(0)
        logits = self.conv(features.transpose(1, 2)).transpose(1, 2)
        weights = torch.softmax(logits, dim=-1)
        return weights.squeeze(0) if squeeze else weights


def weight_cam(cam: Tensor, attention: Tensor, branch: str) -> Tensor:
    """Scale each CAM row by the segment's attention weight for the given branch."""
    idx = BRANCH_INDEX[branch]
    return cam * attention[..., idx : idx + 1]


def topk_logits(cam: Tensor, ratio: int) -> Tensor:
    """Per-class mean of the k = max(1, floor(T / ratio)) largest activations."""
    num_segments = cam.shape[-2]
    k = max(1, num_segments // ratio)
    top = torch.topk(cam, k, dim=-2).values
    return top.mean(dim=-2)


def topk_pool(cam: Tensor, ratio: int) -> Tensor:
    """Video-level class probabilities: softmax over top-k pooled activations."""
    return torch.softmax(topk_logits(cam, ratio), dim=-1)


def branch_targets(labels: Tensor, branch: str) -> Tensor:
    """Video-level target distribution over C+1 classes for one attention branch.

    Instance keeps the foreground labels with background off; context adds the
    background bit; background is background-only. The multi-hot vector is
    normalized to sum to one so the three branch losses share a scale.
    """
    labels = labels.to(DTYPE)
    if branch == "ins":
        target = torch.cat([labels, labels.new_zeros(1)])
        if target.sum() == 0:
            raise ConfigError("instance branch needs at least one foreground label")
    elif branch == "con":
        target = torch.cat([labels, labels.new_ones(1)])
    elif branch == "back":
        target = torch.cat([torch.zeros_like(labels), labels.new_ones(1)])
    else:
        raise ValueError(f"unknown branch {branch!r}")
    return target / target.sum()


def classification_loss(scores: Tensor, labels: Tensor, branch: str, eps: float = 1e-8) -> Tensor:
    """Cross-entropy of the branch's video scores against its normalized targets."""
    target = branch_targets(labels, branch)
    return -(target * torch.log(scores.clamp(min=eps))).sum()
