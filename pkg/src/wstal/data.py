"""Video records, dataset loading, and temporal resampling of segment features."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io


@dataclass
class VideoRecord:
    """One untrimmed video: pre-extracted segment features plus its weak label vector."""

    video_id: str
    features: np.ndarray  # (T0, D)
    duration: float  # seconds
    labels: np.ndarray  # (C,) binary

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.labels = np.asarray(self.labels)
        if self.features.ndim != 2 or self.features.shape[0] < 1 or self.features.shape[1] < 1:
            raise ValueError(f"{self.video_id}: features must be (T0>=1, D>=1), got {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"{self.video_id}: features contain non-finite entries")
        if self.duration <= 0:
            raise ValueError(f"{self.video_id}: duration must be positive")


@dataclass
class GroundTruthSegment:
    """Frame-level annotation (evaluation only, never seen by the trainer)."""

    video_id: str
    class_id: int
    start: float  # seconds
    end: float  # seconds

    def __post_init__(self):
        if not 0.0 <= self.start < self.end:
            raise ValueError(f"{self.video_id}: invalid interval [{self.start}, {self.end})")


@dataclass
class VideoDescriptor:
    """Manifest row: everything about a video except the feature payload."""

    video_id: str
    feature_path: Path
    duration: float
    labels: np.ndarray

    def load(self) -> VideoRecord:
        features = io.read_features(self.feature_path)
        return VideoRecord(self.video_id, features, self.duration, self.labels)


@dataclass
class Dataset:
    """A split of videos with the shared class vocabulary and optional ground truth."""

    class_names: list[str]
    videos: list[VideoRecord]
    ground_truth: list[GroundTruthSegment] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def labels_to_vector(labels: list[str], class_names: list[str]) -> np.ndarray:
    vec = np.zeros(len(class_names), dtype=np.int64)
    for name in labels:
        if name not in class_names:
            raise io.ManifestError(f"label '{name}' is not in the class list {class_names}")
        vec[class_names.index(name)] = 1
    return vec


def load_manifest(path: str | Path, class_names: list[str]) -> list[VideoDescriptor]:
    """Load manifest rows into descriptors, verifying every referenced feature file."""
    descriptors = []
    for entry in io.read_manifest(path):
        feature_path = io.resolve_path(path, entry["feature_path"])
        if not feature_path.exists():
            raise io.ManifestError(f"feature file not found: {feature_path} (referenced by '{entry['id']}')")
        descriptors.append(
            VideoDescriptor(
                video_id=entry["id"],
                feature_path=feature_path,
                duration=float(entry["duration_sec"]),
                labels=labels_to_vector(entry["labels"], class_names),
            )
        )
    return descriptors


def load_ground_truth(path: str | Path, class_names: list[str]) -> list[GroundTruthSegment]:
    segments = []
    for record in io.read_ground_truth(path):
        name = record["class_name"]
        if name not in class_names:
            raise io.ManifestError(f"{path}: ground-truth class '{name}' not in the class list")
        segments.append(
            GroundTruthSegment(
                video_id=record["video_id"],
                class_id=class_names.index(name),
                start=float(record["start_sec"]),
                end=float(record["end_sec"]),
            )
        )
    return segments


def load_dataset(root: str | Path, split: str = "train") -> Dataset:
    """Load a dataset directory: classes.json, <split>.jsonl, optional <split>_gt.jsonl."""
    root = Path(root)
    classes_path = root / "classes.json"
    if not classes_path.exists():
        raise io.ManifestError(f"class list not found: {classes_path}")
    class_names = json.loads(classes_path.read_text())
    manifest_path = root / f"{split}.jsonl"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no '{split}' split at {manifest_path}")
    descriptors = load_manifest(manifest_path, class_names)
    videos = [d.load() for d in descriptors]
    gt_path = root / f"{split}_gt.jsonl"
    ground_truth = load_ground_truth(gt_path, class_names) if gt_path.exists() else []
    return Dataset(class_names=class_names, videos=videos, ground_truth=ground_truth)


def save_dataset(root: str | Path, dataset: Dataset, split: str = "train") -> None:
    """Write a dataset back out in the directory layout that load_dataset reads."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "features").mkdir(exist_ok=True)
    classes_path = root / "classes.json"
    if classes_path.exists():
        existing = json.loads(classes_path.read_text())
        if existing != dataset.class_names:
            raise io.ManifestError(f"{classes_path} exists with a different class list")
    else:
        classes_path.write_text(json.dumps(dataset.class_names))
    entries = []
    for video in dataset.videos:
        rel = f"features/{video.video_id}.wstf"
        io.write_features(root / rel, video.features)
        entries.append(
            {
                "id": video.video_id,
                "feature_path": rel,
                "duration_sec": video.duration,
                "labels": [dataset.class_names[c] for c in np.flatnonzero(video.labels)],
            }
        )
    io.write_manifest(root / f"{split}.jsonl", entries)
    if dataset.ground_truth:
        io.write_ground_truth(
            root / f"{split}_gt.jsonl",
            [
                {
                    "video_id": s.video_id,
                    "class_name": dataset.class_names[s.class_id],
                    "start_sec": s.start,
                    "end_sec": s.end,
                }
                for s in dataset.ground_truth
            ],
        )


def sample_segments(features: np.ndarray, num_segments: int) -> np.ndarray:
    """Resample a (T0, D) matrix to (T, D) rows by linear interpolation along time.

    Output row i sits at source position i * (T0 - 1) / (T - 1); a single target
    segment degenerates to the mean row.
    """
    features = np.asarray(features, dtype=np.float64)
    t0 = features.shape[0]
    if t0 < 1 or num_segments < 1:
        raise ValueError("need at least one source and one target segment")
    if num_segments == 1:
        return features.mean(axis=0, keepdims=True)
    if t0 == num_segments:
        return features.copy()
    positions = np.arange(num_segments) * (t0 - 1) / (num_segments - 1)
    lower = np.floor(positions).astype(np.int64)
    lower = np.minimum(lower, t0 - 1)
    upper = np.minimum(lower + 1, t0 - 1)
    frac = (positions - lower)[:, None]
    return (1.0 - frac) * features[lower] + frac * features[upper]
