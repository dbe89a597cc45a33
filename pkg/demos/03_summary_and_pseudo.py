"""Walkthrough of knowledge summarization, retrieval, fusion, and self-training.

Second half of the model: the filled bank rows are compressed into a small
summary matrix by learnable codewords, every video retrieves from that matrix
without extra parameters, a zero-initialized residual block fuses the result
back in, and the disagreement between the plain and fused CAMs drives an
uncertainty-weighted pseudo-label loss.
"""

import math

import torch

from wstal.model import DTYPE, CamHead
from wstal.network import LocalizationNetwork, ModelConfig
from wstal.pseudo import PseudoConfig, pseudo_loss, segment_probs, uncertainty
from wstal.summarize import FusionBlock, KnowledgeSummarizer, SummarizerConfig, aggregate

torch.manual_seed(0)

D = 8  # embedding width for the whole walkthrough

# --- codewords compress the bank into a summary -----------------------------

# stand-in for the flattened filled rows of a memory bank: 50 raw vectors
rows = torch.randn(50, D, dtype=DTYPE)

summarizer = KnowledgeSummarizer(D, SummarizerConfig(num_codewords=6, sparse_topk=10))
summary, attn = summarizer.summarize(rows)
print("summary:", tuple(summary.shape), " attention:", tuple(attn.shape))

# sparsity: each codeword attends to at most `sparse_topk` rows, the rest are
# masked to exactly zero before softmax renormalizes
nonzero = (attn > 0).sum(dim=-1)
print("rows attended per codeword:", nonzero.tolist(), "(cap 10)")

# --- retrieval is non-parametric --------------------------------------------

# each segment's embedding attends over summary rows; the output is a convex
# combination, so every coordinate stays inside the summary's column range
segments = 3.0 * torch.randn(12, D, dtype=DTYPE)  # deliberately wider spread
retrieved = aggregate(segments, summary)
lo, hi = summary.min(dim=0).values, summary.max(dim=0).values
inside = bool(((retrieved >= lo) & (retrieved <= hi)).all())
print("retrieved rows stay inside the summary's per-coordinate hull:", inside)

# the same check fails for the raw segments, which is the point: retrieval
# rewrites each segment in the vocabulary of the summarized memory
print("raw segments already inside that hull:",
      bool(((segments >= lo) & (segments <= hi)).all()))

# --- fusion starts as the identity ------------------------------------------

# the last fusion layer is zero-initialized, so before any training the fused
# embeddings equal the input embeddings exactly (LayerNorm off to see it raw)
fusion = FusionBlock(D, use_layer_norm=False, zero_init=True)
fused = fusion(retrieved, segments)
print("zero-init fusion is the identity:", torch.equal(fused, segments))

# --- one head, two CAMs ------------------------------------------------------

# the pseudo branch runs the fused embeddings through the *same* CamHead
# object as the main branch, so at init (identity fusion) the CAMs agree
# and any head update moves both branches in lockstep
net = LocalizationNetwork(ModelConfig(
    num_classes=4, in_dim=D, embed_dim=D,
    num_codewords=6, sparse_topk=10,
    use_layer_norm=False, fusion_zero_init=True,
))
video = torch.randn(12, D, dtype=DTYPE)
out = net.main_branch(video)
pseudo = net.pseudo_branch(out.embeddings, summary)
print("untrained fusion keeps the CAMs identical:",
      torch.equal(pseudo.cam, out.cam))

with torch.no_grad():
    net.cam_head.proj.bias += 0.25  # nudge the shared head once
out2 = net.main_branch(video)
pseudo2 = net.pseudo_branch(out2.embeddings, summary)
print("one bias nudge shifts both CAMs by 0.25:",
      torch.allclose(out2.cam, out.cam + 0.25),
      torch.allclose(pseudo2.cam, pseudo.cam + 0.25))

# --- uncertainty gates the self-training loss --------------------------------

cam = torch.randn(12, 5, dtype=DTYPE)  # 4 classes + background
agree = uncertainty(cam, cam)
print("KL of a CAM against itself:", float(agree.abs().max()))

# perturb one class column; the softmax posteriors move and KL turns positive
shifted = cam.clone()
shifted[:, 0] += 1.5
disagree = uncertainty(cam, shifted)
print(f"KL after shifting one column: {float(disagree.mean()):.4f}")

# exp(-KL) maps agreement to a confidence weight in (0, 1]
weight = torch.exp(-disagree)
print(f"confidence weights: min {float(weight.min()):.3f} max {float(weight.max()):.3f}")

# the loss wraps this up: weighted cross-entropy toward the fused posteriors
# plus a small penalty on the divergence itself
config = PseudoConfig(variance_weight=0.001)
print(f"self-training loss (disagreeing): {float(pseudo_loss(cam, shifted, config)):.4f}")

# in perfect agreement the cross-entropy reduces to the posterior entropy
same = pseudo_loss(cam, cam, config)
entropy = -(segment_probs(cam) * segment_probs(cam).log()).sum(-1).mean()
print("agreeing loss == mean posterior entropy:",
      math.isclose(float(same), float(entropy), rel_tol=1e-12))
