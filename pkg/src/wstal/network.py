"""Composite localization network tying the branches together.

The main branch embeds segment features, produces a CAM through the shared
classification head, and splits it into instance / context / background views
via learned attention. The pseudo branch retrieves context from a summary
matrix, fuses it with the embeddings, and reuses the *same* head object so
both CAMs live in one activation space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import Tensor, nn

from .model import (
    BRANCHES,
    AttentionHead,
    CamHead,
    Embedder,
    topk_pool,
    weight_cam,
)
from .summarize import FusionBlock, KnowledgeSummarizer, SummarizerConfig, aggregate

CAM_SOURCES = ("auto", "main", "pseudo", "mean")


@dataclass
class ModelConfig:
    num_classes: int | None = None  # resolved from the dataset when None
    in_dim: int | None = None
    embed_dim: int = 64
    embed_depth: int = 1
    topk_ratio: int = 8
    num_codewords: int = 40
    sparse_topk: int = 64
    ffn_hidden: int | None = None
    use_layer_norm: bool = True
    fusion_zero_init: bool = True

    def __post_init__(self):
        if self.num_classes is not None and self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.in_dim is not None and self.in_dim < 1:
            raise ValueError("in_dim must be >= 1")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if self.topk_ratio < 1:
            raise ValueError("topk_ratio must be >= 1")

    def summarizer_config(self) -> SummarizerConfig:
        return SummarizerConfig(
            num_codewords=self.num_codewords,
            sparse_topk=self.sparse_topk,
            ffn_hidden=self.ffn_hidden,
            use_layer_norm=self.use_layer_norm,
        )


@dataclass
class MainOutput:
    embeddings: Tensor  # (..., T, D)
    cam: Tensor  # (..., T, C+1)
    attention: Tensor  # (..., T, 3)
    weighted: dict = field(default_factory=dict)  # branch -> (..., T, C+1)
    scores: dict = field(default_factory=dict)  # branch -> (..., C+1)


@dataclass
class PseudoOutput:
    retrieved: Tensor
    fused: Tensor
    cam: Tensor


class LocalizationNetwork(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.num_classes is None or config.in_dim is None:
            raise ValueError("num_classes and in_dim must be resolved before building the network")
        self.config = config
        self.embedder = Embedder(config.in_dim, config.embed_dim, depth=config.embed_depth)
        self.cam_head = CamHead(config.embed_dim, config.num_classes)
        self.att_head = AttentionHead(config.embed_dim)
        self.summarizer = KnowledgeSummarizer(config.embed_dim, config.summarizer_config())
        self.fusion = FusionBlock(
            config.embed_dim,
            hidden=config.ffn_hidden,
            use_layer_norm=config.use_layer_norm,
            zero_init=config.fusion_zero_init,
        )

    def main_branch(self, x: Tensor) -> MainOutput:
        features = self.embedder(x)
        cam = self.cam_head(features)
        attention = self.att_head(features)
        out = MainOutput(embeddings=features, cam=cam, attention=attention)
        for branch in BRANCHES:
            weighted = weight_cam(cam, attention, branch)
            out.weighted[branch] = weighted
            out.scores[branch] = topk_pool(weighted, self.config.topk_ratio)
        return out

    def summarize(self, memory_rows: Tensor) -> Tensor:
        return self.summarizer(memory_rows)

    def pseudo_branch(self, features: Tensor, summary: Tensor) -> PseudoOutput:
        retrieved = aggregate(features, summary)
        fused = self.fusion(retrieved, features)
        return PseudoOutput(retrieved=retrieved, fused=fused, cam=self.cam_head(fused))

    def localize(self, x: Tensor, summary: Tensor | None = None,
                 source: str = "auto") -> tuple[Tensor, Tensor]:
        """Instance-weighted CAM and video-level scores for one video.

        source selects which CAM feeds localization: the main branch, the
        pseudo branch (needs a summary), their mean, or auto (pseudo when a
        summary is available, else main).
        """
        if source not in CAM_SOURCES:
            raise ValueError(f"unknown cam source {source!r}")
        if source == "auto":
            source = "pseudo" if summary is not None else "main"
        if source in ("pseudo", "mean") and summary is None:
            raise ValueError(f"cam source {source!r} requires a summary matrix")
        main = self.main_branch(x)
        if source == "main":
            cam = main.cam
        else:
            pseudo = self.pseudo_branch(main.embeddings, summary)
            cam = pseudo.cam if source == "pseudo" else 0.5 * (main.cam + pseudo.cam)
        weighted = weight_cam(cam, main.attention, "ins")
        return weighted, topk_pool(weighted, self.config.topk_ratio)
