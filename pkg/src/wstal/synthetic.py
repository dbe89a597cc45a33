"""Deterministic synthetic datasets with planted actions and known ground truth.

Stands in for backbone features: each foreground class gets a prototype vector
on a sphere, videos are background noise with intervals where the prototype is
added, and the weak label vector is exactly the set of planted classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, GroundTruthSegment, VideoRecord

SECONDS_PER_SEGMENT = 1.0


class SyntheticSpecError(ValueError):
    """Raised when a synthetic spec is invalid or cannot be realized."""


@dataclass
class SyntheticSpec:
    num_classes: int
    num_videos: int
    num_segments: int  # T
    feature_dim: int  # D
    actions_per_video: tuple[int, int] = (1, 2)
    action_length: tuple[int, int] = (5, 15)  # in segments
    prototype_separation: float = 0.5
    noise_scale: float = 0.1
    seed: int = 0
    prototype_radius: float = 1.0

    def __post_init__(self):
        if self.num_classes < 1 or self.num_videos < 1:
            raise SyntheticSpecError("need at least one class and one video")
        if self.num_segments < 1 or self.feature_dim < 1:
            raise SyntheticSpecError("need at least one segment and one feature dimension")
        lo, hi = self.actions_per_video
        if not 1 <= lo <= hi:
            raise SyntheticSpecError(f"bad actions_per_video range {self.actions_per_video}")
        lo, hi = self.action_length
        if not 1 <= lo <= hi <= self.num_segments:
            raise SyntheticSpecError(f"bad action_length range {self.action_length}")
        if self.prototype_separation <= 2.0 * self.noise_scale:
            raise SyntheticSpecError(
                "prototype_separation must exceed 2 * noise_scale for a learnable problem"
            )


def _draw_prototypes(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Sample class prototypes on a sphere, rejecting sets that sit too close."""
    for _ in range(1000):
        raw = rng.standard_normal((spec.num_classes, spec.feature_dim))
        protos = spec.prototype_radius * raw / np.linalg.norm(raw, axis=1, keepdims=True)
        if spec.num_classes == 1:
            return protos
        dists = np.linalg.norm(protos[:, None, :] - protos[None, :, :], axis=-1)
        np.fill_diagonal(dists, np.inf)
        if dists.min() >= spec.prototype_separation:
            return protos
    raise SyntheticSpecError(
        f"could not place {spec.num_classes} prototypes at separation "
        f"{spec.prototype_separation} (radius {spec.prototype_radius})"
    )


def _place_actions(
    spec: SyntheticSpec, rng: np.random.Generator
) -> list[tuple[int, int, int]]:
    """Pick non-overlapping (class, start, end) segment intervals for one video."""
    count = int(rng.integers(spec.actions_per_video[0], spec.actions_per_video[1] + 1))
    placed: list[tuple[int, int, int]] = []
    for _ in range(count):
        ok = False
        for _ in range(200):
            cls = int(rng.integers(spec.num_classes))
            length = int(rng.integers(spec.action_length[0], spec.action_length[1] + 1))
            if length > spec.num_segments:
                continue
            start = int(rng.integers(spec.num_segments - length + 1))
            end = start + length
            if all(end <= s or start >= e for _, s, e in placed):
                placed.append((cls, start, end))
                ok = True
                break
        if not ok:
            raise SyntheticSpecError(
                f"could not place {count} non-overlapping actions in {spec.num_segments} segments"
            )
    return placed


def generate_dataset(spec: SyntheticSpec, prefix: str = "video") -> tuple[Dataset, np.ndarray]:
    """Generate (dataset, prototypes); bit-identical for identical specs."""
    rng = np.random.default_rng(spec.seed)
    prototypes = _draw_prototypes(spec, rng)
    duration = spec.num_segments * SECONDS_PER_SEGMENT
    videos = []
    ground_truth = []
    for v in range(spec.num_videos):
        video_id = f"{prefix}_{v:04d}"
        features = spec.noise_scale * rng.standard_normal((spec.num_segments, spec.feature_dim))
        labels = np.zeros(spec.num_classes, dtype=np.int64)
        for cls, start, end in _place_actions(spec, rng):
            features[start:end] += prototypes[cls]
            labels[cls] = 1
            ground_truth.append(
                GroundTruthSegment(
                    video_id=video_id,
                    class_id=cls,
                    start=start * SECONDS_PER_SEGMENT,
                    end=end * SECONDS_PER_SEGMENT,
                )
            )
        videos.append(
            VideoRecord(
                video_id=video_id,
                features=features.astype(np.float32),
                duration=duration,
                labels=labels,
            )
        )
    class_names = [f"class_{c}" for c in range(spec.num_classes)]
    return Dataset(class_names, videos, ground_truth), prototypes


def split_dataset(dataset: Dataset, num_train: int) -> tuple[Dataset, Dataset]:
    """Split by video index; ground truth follows its video."""
    if not 0 < num_train < len(dataset.videos):
        raise ValueError(f"num_train={num_train} out of range for {len(dataset.videos)} videos")
    train_ids = {v.video_id for v in dataset.videos[:num_train]}
    train = Dataset(
        dataset.class_names,
        dataset.videos[:num_train],
        [g for g in dataset.ground_truth if g.video_id in train_ids],
    )
    test = Dataset(
        dataset.class_names,
        dataset.videos[num_train:],
        [g for g in dataset.ground_truth if g.video_id not in train_ids],
    )
    return train, test
