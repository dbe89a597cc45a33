"""Noise-tolerant contrastive loss over memory bank directions.

The loss couples a query representative with same-class bank rows (positives)
and rows of every other class (negatives). The noisy-pair penalty is a
generalized Box-Cox transform of the usual softmax denominator: for exponent
q -> 0 it recovers log-sum-exp (InfoNCE-like), while q in (0, 1) caps the
influence of any single corrupted positive.

The penalty term is evaluated in the log domain,
    (1/q) * exp(q * (log(lam) + logsumexp(scores / tau)))
so large score/temperature ratios cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .memory import MemorySnapshot

NORM_TOL = 1e-4


@dataclass
class ContrastConfig:
    temperature: float = 0.07
    density_weight: float = 0.5  # lam
    robustness: float = 0.2  # q, in (0, 1]

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.density_weight <= 0:
            raise ValueError("density_weight must be positive")
        if not 0.0 < self.robustness <= 1.0:
            raise ValueError("robustness exponent must lie in (0, 1]")


def _normalize(rows: Tensor) -> Tensor:
    norms = rows.norm(dim=-1, keepdim=True)
    keep = norms.squeeze(-1) > 1e-12
    return rows[keep] / norms[keep]


def build_pairs(snapshot: MemorySnapshot, class_id: int) -> tuple[Tensor, Tensor]:
    """Unit-normalized (positives, negatives) for one class from a bank snapshot.

    Positives are the filled rows of `class_id`; negatives pool the filled rows
    of all other classes, background included. Rows with vanishing norm carry
    no direction and are dropped.
    """
    positives = _normalize(snapshot.filled_rows(class_id))
    chunks = [
        snapshot.filled_rows(c)
        for c in range(snapshot.num_classes)
        if c != class_id and snapshot.fill[c] > 0
    ]
    if chunks:
        negatives = _normalize(torch.cat(chunks))
    else:
        negatives = positives.new_zeros((0, positives.shape[-1] if positives.dim() == 2 else 0))
    return positives, negatives


def _check_unit(name: str, rows: Tensor) -> None:
    if rows.numel() == 0:
        return
    norms = rows.norm(dim=-1)
    worst = (norms - 1.0).abs().max().item()
    if worst > NORM_TOL:
        raise ValueError(f"{name} must be unit length (max norm deviation {worst:.2e})")


def contrastive_loss(
    query: Tensor, positives: Tensor, negatives: Tensor, config: ContrastConfig
) -> Tensor:
    """Robust contrastive loss for one query against positive/negative directions.

    All inputs must already be L2-normalized; with no positives the query has
    nothing to contrast and the loss is exactly zero.
    """
    _check_unit("query", query.unsqueeze(0))
    _check_unit("positives", positives)
    _check_unit("negatives", negatives)
    if len(positives) == 0:
        return query.sum() * 0.0

    tau, lam, q = config.temperature, config.density_weight, config.robustness
    s_pos = positives @ query / tau  # (P,)
    s_neg = negatives @ query / tau  # (N,)

    attract = -(1.0 / q) * torch.exp(q * s_pos).sum()

    # Per positive: logsumexp over {its own score} union {all negative scores}.
    pooled = torch.cat([s_pos.unsqueeze(1), s_neg.unsqueeze(0).expand(len(s_pos), -1)], dim=1)
    log_z = torch.logsumexp(pooled, dim=1)
    penalty = (1.0 / q) * torch.exp(q * (torch.log(torch.as_tensor(lam, dtype=query.dtype)) + log_z)).sum()
    return attract + penalty
