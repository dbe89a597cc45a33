"""Global knowledge summarization and aggregation.

A small set of learnable codewords attends over the flattened memory bank and
compresses it into a summary matrix T_M. Videos then query that summary with
plain (non-parametric) scaled dot-product attention and fuse the retrieved
context back into their own embeddings through a gated residual MLP.

Cross attention from codewords to bank rows is sparse: each codeword keeps its
top-m key scores and masks the rest to -inf before the softmax, so summary
cost scales with m rather than the bank size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .model import DTYPE


@dataclass
class SummarizerConfig:
    num_codewords: int = 40
    sparse_topk: int = 64
    ffn_hidden: int | None = None
    use_layer_norm: bool = True

    def __post_init__(self):
        if self.num_codewords < 1:
            raise ValueError("num_codewords must be >= 1")
        if self.sparse_topk < 1:
            raise ValueError("sparse_topk must be >= 1")


def sinusoidal_encoding(length: int, dim: int, dtype: torch.dtype = DTYPE) -> Tensor:
    """Standard transformer position encoding for indices 0..length-1."""
    position = torch.arange(length, dtype=dtype).unsqueeze(1)
    half = torch.arange(0, dim, 2, dtype=dtype)
    freq = torch.exp(-half * math.log(10000.0) / dim)
    pe = torch.zeros(length, dim, dtype=dtype)
    pe[:, 0::2] = torch.sin(position * freq)
    pe[:, 1::2] = torch.cos(position * freq)[:, : dim // 2]
    return pe


class SeparableProjection(nn.Module):
    """Depthwise scale followed by a pointwise linear map (two 1x1 convolutions)."""

    def __init__(self, dim: int):
        super().__init__()
        self.scale = nn.Parameter(torch.ones(dim, dtype=DTYPE))
        self.point = nn.Linear(dim, dim, dtype=DTYPE)

    def forward(self, x: Tensor) -> Tensor:
        return self.point(x * self.scale)


def _mlp(in_dim: int, hidden: int, out_dim: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(in_dim, hidden, dtype=DTYPE),
        nn.ReLU(),
        nn.Linear(hidden, out_dim, dtype=DTYPE),
    )


class KnowledgeSummarizer(nn.Module):
    """Learnable codewords that compress a memory bank into a summary matrix."""

    def __init__(self, dim: int, config: SummarizerConfig):
        super().__init__()
        self.dim = dim
        self.config = config
        n = config.num_codewords
        self.codewords = nn.Parameter(torch.randn(n, dim, dtype=DTYPE) / math.sqrt(dim))
        self.register_buffer("pe", sinusoidal_encoding(n, dim), persistent=False)
        self.key_mlp = _mlp(2 * dim, dim, dim)
        self.value_mlp = _mlp(2 * dim, dim, dim)
        self.mem_key = SeparableProjection(dim)
        self.mem_value = SeparableProjection(dim)
        hidden = config.ffn_hidden or dim
        self.ffn = _mlp(dim, hidden, dim)
        if config.use_layer_norm:
            self.norm_query = nn.LayerNorm(dim, dtype=DTYPE)
            self.norm_att = nn.LayerNorm(dim, dtype=DTYPE)
            self.norm_out = nn.LayerNorm(dim, dtype=DTYPE)
        else:
            self.norm_query = nn.Identity()
            self.norm_att = nn.Identity()
            self.norm_out = nn.Identity()

    def codeword_queries(self) -> tuple[Tensor, Tensor]:
        """Self-attention among codewords; keys/values see position encodings.

        Returns the refined queries and the (N, N) attention matrix.
        """
        tagged = torch.cat([self.codewords, self.pe], dim=-1)
        keys = self.key_mlp(tagged)
        values = self.value_mlp(tagged)
        attn = torch.softmax(self.codewords @ keys.T / math.sqrt(self.dim), dim=-1)
        queries = self.norm_query(self.codewords + attn @ values)
        return queries, attn

    def summarize(self, memory_rows: Tensor) -> tuple[Tensor, Tensor]:
        """Sparse cross attention from codeword queries to bank rows.

        memory_rows: (R, D) flattened filled bank rows, R >= 1.
        Returns (T_M, attention) with T_M of shape (N, D).
        """
        if memory_rows.dim() != 2 or len(memory_rows) == 0:
            raise ValueError("memory_rows must be a non-empty (R, D) matrix")
        queries, _ = self.codeword_queries()
        keys = self.mem_key(memory_rows)
        values = self.mem_value(memory_rows)
        scores = queries @ keys.T / math.sqrt(self.dim)  # (N, R)
        m = min(self.config.sparse_topk, len(memory_rows))
        if m < len(memory_rows):
            kept = torch.topk(scores, m, dim=-1).indices
            mask = torch.full_like(scores, float("-inf"))
            mask.scatter_(-1, kept, 0.0)
            scores = scores + mask
        attn = torch.softmax(scores, dim=-1)
        attended = self.norm_att(queries + attn @ values)
        summary = self.norm_out(attended + self.ffn(attended))
        return summary, attn

    def forward(self, memory_rows: Tensor) -> Tensor:
        return self.summarize(memory_rows)[0]


def aggregate(features: Tensor, summary: Tensor) -> Tensor:
    """Non-parametric retrieval: each segment row attends over summary rows.

    features: (..., T, D); summary: (N, D). Returns (..., T, D).
    """
    dim = features.shape[-1]
    weights = torch.softmax(features @ summary.T / math.sqrt(dim), dim=-1)
    return weights @ summary


class FusionBlock(nn.Module):
    """Residual fusion of retrieved context with the original embeddings.

    The final MLP layer starts at zero so fusion is initially the identity
    (up to the output LayerNorm) and the pseudo branch cannot destabilize
    early training.
    """

    def __init__(self, dim: int, hidden: int | None = None, use_layer_norm: bool = True,
                 zero_init: bool = True):
        super().__init__()
        self.mlp = _mlp(2 * dim, hidden or dim, dim)
        if zero_init:
            last = self.mlp[-1]
            nn.init.zeros_(last.weight)
            nn.init.zeros_(last.bias)
        self.norm = nn.LayerNorm(dim, dtype=DTYPE) if use_layer_norm else nn.Identity()

    def forward(self, retrieved: Tensor, features: Tensor) -> Tensor:
        mixed = self.mlp(torch.cat([retrieved, features], dim=-1))
        return self.norm(features + mixed)
