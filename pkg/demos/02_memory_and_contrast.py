"""Walkthrough of the memory bank and the robust contrastive loss.

Shows each moving part in isolation: thresholding a CAM column into a segment
mask, pooling the masked embeddings into one representative vector, momentum
writes into the per-class ring queues, the label gate, and finally how the
contrastive loss reacts to agreement, disagreement, and its robustness knob.
"""

import torch

from wstal.contrast import ContrastConfig, build_pairs, contrastive_loss
from wstal.memory import MemoryBank, MemoryConfig, compute_mask, representative_feature
from wstal.model import DTYPE

torch.manual_seed(0)

# --- from CAM column to representative vector -------------------------------

# a toy CAM for one video: 10 segments, 2 foreground classes + background.
# class 0 fires on segments 3..6, everything else stays low.
cam = torch.full((10, 3), -1.0, dtype=DTYPE)
cam[3:7, 0] = torch.tensor([2.0, 3.0, 3.0, 2.0], dtype=DTYPE)

# thresholding is strict and happens after min-max normalization, so the
# shoulders at 2.0 normalize to exactly 0.75 and only segments 4..5 survive
mask = compute_mask(cam, class_id=0, threshold=0.75)
print("mask for class 0:", mask.int().tolist())

features = torch.randn(10, 4, dtype=DTYPE)  # pretend embeddings, D=4
beta = representative_feature(features, mask)
print("representative == mean of masked rows:",
      torch.equal(beta, features[4:6].mean(dim=0)))

# a constant column has nothing to threshold, so the mask is empty and the
# representative is None; callers just skip the write in that case
flat_mask = compute_mask(torch.zeros(10, 3, dtype=DTYPE), 1, 0.75)
print("constant column ->", representative_feature(features, flat_mask))

# --- momentum writes and the label gate -------------------------------------

# 2 foreground classes + background queue, 3 slots each
bank = MemoryBank(num_classes=2, feature_dim=4, config=MemoryConfig(queue_len=3, momentum=0.9))

labels = torch.tensor([1.0, 0.0], dtype=DTYPE)  # video carries class 0 only
bank.update(0, beta, labels)
print("first write lands verbatim:", torch.equal(bank.filled_rows(0)[0], beta))

# class 1 is absent from the video, so the gate rejects the write
accepted = bank.update(1, torch.randn(4, dtype=DTYPE), labels)
print("gated write accepted:", accepted, "| stats:", bank.stats)

# once the ring wraps, a slot blends old and new with the momentum coefficient
for _ in range(3):
    bank.update(0, beta, labels)  # fill the remaining slots and wrap
newer = torch.randn(4, dtype=DTYPE)
bank.update(0, newer, labels)  # lands on slot 1, which already holds beta
blended = 0.1 * beta + 0.9 * newer
print("wrapped slot is 0.1*old + 0.9*new:",
      torch.allclose(bank.rows[0, 1], blended))

# background writes (index num_foreground) bypass the gate entirely
bank.update(bank.background_id, torch.randn(4, dtype=DTYPE), labels)
print("fill per class after updates:", bank.fill.tolist())

# --- the contrastive loss on top --------------------------------------------

# training reads through a snapshot so every video in a batch sees the same
# bank state; positives come from the query's class, negatives from the rest
snap = bank.snapshot()
positives, negatives = build_pairs(snap, class_id=0)
print("pairs for class 0:", len(positives), "positives,", len(negatives), "negatives")

config = ContrastConfig(temperature=0.07, density_weight=0.5, robustness=0.2)
query = positives[0]  # a query aligned with its own class
aligned = contrastive_loss(query, positives, negatives, config)

rotated = torch.zeros(4, dtype=DTYPE)
rotated[torch.argmin(query.abs())] = 1.0  # roughly orthogonal direction
clash = contrastive_loss(rotated / rotated.norm(), positives, negatives, config)
print(f"aligned query loss {aligned.item():.3f} < misaligned {clash.item():.3f}:",
      bool(aligned < clash))

# the robustness exponent q compresses the dynamic range of the similarities.
# at q=1 the exponentials are untempered and the single best-aligned pair
# dominates the loss by orders of magnitude; shrinking q keeps every pair,
# clean or poisoned, on a comparable footing
bad = -query
pos_mix = torch.stack([query, bad])
for q in (1.0, 0.5, 0.2):
    loss = contrastive_loss(query, pos_mix, negatives, ContrastConfig(robustness=q))
    print(f"  q={q:.1f}  loss with a poisoned positive: {loss.item():12.3f}")

# no positives at all: nothing to contrast, exactly zero by construction
empty = contrastive_loss(query, positives[:0], negatives, config)
print("no positives -> loss", empty.item())
