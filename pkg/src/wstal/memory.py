"""Momentum-updated memory bank of per-class representative features.

Each of the C+1 classes (foreground plus background) owns a fixed-length ring
queue. New representatives overwrite the oldest slot through a momentum blend,
so every filled slot is a convex combination of the representatives written to
it. Slots being filled for the first time take the new vector directly instead
of blending with the zero initialization.

Rows are stored raw (not unit length); consumers that need directions, such as
the contrastive loss, normalize on read.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from .model import DTYPE


@dataclass
class MemoryConfig:
    queue_len: int = 500
    momentum: float = 0.99
    mask_threshold: float = 0.75
    warmup_epochs: int = 50

    def __post_init__(self):
        if self.queue_len < 1:
            raise ValueError("queue_len must be >= 1")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must lie in [0, 1]")
        if not 0.0 <= self.mask_threshold <= 1.0:
            raise ValueError("mask_threshold must lie in [0, 1]")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")


def compute_mask(cam: Tensor, class_id: int, threshold: float) -> Tensor:
    """Boolean segment mask from one min-max normalized CAM column.

    A constant column has no contrast to threshold, so it yields an all-False
    mask rather than an arbitrary split.
    """
    column = cam[:, class_id]
    lo, hi = column.min(), column.max()
    if hi == lo:
        return torch.zeros_like(column, dtype=torch.bool)
    return (column - lo) / (hi - lo) > threshold


def representative_feature(features: Tensor, mask: Tensor) -> Tensor | None:
    """Mean of the masked embedding rows; None when the mask selects nothing."""
    if not bool(mask.any()):
        return None
    return features[mask].mean(dim=0)


@dataclass
class MemorySnapshot:
    """Read-only copy of the bank taken at the start of a training step."""

    rows: Tensor  # (C+1, Q, D)
    fill: np.ndarray  # (C+1,)

    @property
    def num_classes(self) -> int:
        return self.rows.shape[0]

    def filled_rows(self, class_id: int) -> Tensor:
        return self.rows[class_id, : int(self.fill[class_id])]

    def all_filled_rows(self) -> tuple[Tensor, np.ndarray]:
        """Concatenated filled rows of every class plus their class ids."""
        chunks, owners = [], []
        for c in range(self.num_classes):
            rows = self.filled_rows(c)
            if len(rows):
                chunks.append(rows)
                owners.append(np.full(len(rows), c, dtype=np.int64))
        if not chunks:
            dim = self.rows.shape[-1]
            return self.rows.new_zeros((0, dim)), np.zeros(0, dtype=np.int64)
        return torch.cat(chunks), np.concatenate(owners)


class MemoryBank:
    """Per-class ring queues with momentum writes.

    `num_classes` counts foreground classes; the bank allocates one extra queue
    for background at index `num_classes`.
    """

    def __init__(self, num_classes: int, feature_dim: int, config: MemoryConfig):
        self.config = config
        self.num_foreground = num_classes
        self.rows = torch.zeros(num_classes + 1, config.queue_len, feature_dim, dtype=DTYPE)
        self.cursor = np.zeros(num_classes + 1, dtype=np.int64)
        self.fill = np.zeros(num_classes + 1, dtype=np.int64)
        self.stats = {"writes": 0, "rejected_label": 0, "degenerate_masks": 0}

    @property
    def background_id(self) -> int:
        return self.num_foreground

    def update(self, class_id: int, beta: Tensor, labels: Tensor | None = None) -> bool:
        """Write one representative; returns False when the label gate rejects it.

        Foreground writes require the video to carry that label; background
        writes are always accepted. Rejections leave the queue untouched.
        """
        if class_id < self.num_foreground and labels is not None and labels[class_id] == 0:
            self.stats["rejected_label"] += 1
            return False
        q = self.config.queue_len
        slot = int(self.cursor[class_id])
        beta = beta.detach().to(DTYPE)
        if self.fill[class_id] < q and slot == self.fill[class_id]:
            self.rows[class_id, slot] = beta
            self.fill[class_id] += 1
        else:
            alpha = self.config.momentum
            self.rows[class_id, slot] = (1.0 - alpha) * self.rows[class_id, slot] + alpha * beta
        self.cursor[class_id] = (slot + 1) % q
        self.stats["writes"] += 1
        return True

    def snapshot(self) -> MemorySnapshot:
        return MemorySnapshot(rows=self.rows.clone(), fill=self.fill.copy())

    def filled_rows(self, class_id: int) -> Tensor:
        return self.rows[class_id, : int(self.fill[class_id])]

    def state_dict(self) -> dict:
        return {
            "rows": self.rows.clone(),
            "cursor": self.cursor.copy(),
            "fill": self.fill.copy(),
            "stats": dict(self.stats),
        }

    def load_state_dict(self, state: dict) -> None:
        rows = state["rows"]
        if tuple(rows.shape) != tuple(self.rows.shape):
            raise ValueError(
                f"bank shape mismatch: checkpoint {tuple(rows.shape)}, bank {tuple(self.rows.shape)}"
            )
        self.rows = rows.clone().to(DTYPE)
        self.cursor = np.asarray(state["cursor"], dtype=np.int64).copy()
        self.fill = np.asarray(state["fill"], dtype=np.int64).copy()
        self.stats = dict(state["stats"])
