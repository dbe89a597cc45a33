"""Quickstart: synthetic data -> short training run -> proposals -> mAP table.

Everything runs on CPU in well under a minute. The dataset is small and the
schedule short, so the numbers are modest; bump epochs/videos for better ones.
"""

import dataclasses
import tempfile
from pathlib import Path

from wstal import RunConfig, SyntheticSpec, Trainer, generate_dataset, split_dataset
from wstal.memory import MemoryConfig
from wstal.network import ModelConfig
from wstal.proposals import run_inference
from wstal.evaluate import mean_ap
from wstal.train import TrainConfig, load_checkpoint

# plant 3 action classes into 30 videos of 40 segments each
spec = SyntheticSpec(
    num_classes=3,
    num_videos=30,
    num_segments=40,
    feature_dim=16,
    action_length=(5, 12),
    prototype_separation=1.2,
    noise_scale=0.2,
    seed=1,
)
dataset, prototypes = generate_dataset(spec)
train_data, test_data = split_dataset(dataset, 24)
print(f"{len(train_data.videos)} train / {len(test_data.videos)} test videos,"
      f" {len(test_data.ground_truth)} test ground-truth segments")

# small model, short schedule; the memory bank switches on after 5 epochs
config = RunConfig()
config = dataclasses.replace(
    config,
    data=dataclasses.replace(config.data, num_segments=40),
    model=ModelConfig(embed_dim=16, num_codewords=8, sparse_topk=16),
    train=TrainConfig(epochs=30, batch_size=8, learning_rate=2e-3, warmup_epochs=5, seed=0),
    memory=MemoryConfig(queue_len=10, warmup_epochs=5),
)

trainer = Trainer(config, train_data, eval_data=test_data)
out_dir = Path(tempfile.mkdtemp(prefix="wstal_demo_"))
metrics = trainer.fit(out_dir)  # trains to completion, saves the checkpoint

# total loss jumps once warmup ends: the contrastive and pseudo-label terms
# come online together with the bank (contrast is reported unweighted here)
for record in metrics[::10] + [metrics[-1]]:
    print(f"epoch {record['epoch']:3d}  loss {record['loss']:.4f}"
          f"  cls {record['loss_cls']:.4f}  contrast {record['loss_contrast']:.4f}"
          f"  pseudo {record['loss_pseudo']:.4f}")

# inference from the saved checkpoint, exactly what `wstal infer` does
bundle = load_checkpoint(out_dir)
proposals = run_inference(
    bundle.model, test_data, bundle.num_segments, config.inference, summary=bundle.summary
)
total = sum(len(v) for v in proposals.values())
print(f"\n{total} proposals across {len(proposals)} videos; first few:")
for prop in proposals[test_data.videos[0].video_id][:3]:
    print(f"  class {prop.class_id}  conf {prop.confidence:+.3f}"
          f"  [{prop.start:5.1f}s, {prop.end:5.1f}s)")

result = mean_ap(proposals, test_data.ground_truth, test_data.num_classes, config.eval)
print()
print(result.format_table())
print(f"\ncheckpoint and logs in {out_dir}")
