"""Proposal generation from weighted CAMs, class-wise NMS, inference driver.

Proposals come from a multi-threshold strategy: each selected class column is
min-max normalized, thresholded at every level in the configured set, and the
maximal runs of consecutive supra-threshold segments become candidate
intervals. A candidate's confidence is the contrast between its inner mean
activation and the mean over an outer margin on both sides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .data import Dataset, sample_segments
from .evaluate import tiou
from .model import DTYPE
from .network import CAM_SOURCES, LocalizationNetwork

DEFAULT_LEVELS = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass
class Proposal:
    class_id: int
    confidence: float
    start: float  # seconds
    end: float  # seconds


@dataclass
class InferenceConfig:
    class_threshold: float = 0.2
    activation_thresholds: tuple = DEFAULT_LEVELS
    nms_tiou: float = 0.45
    outer_margin: float = 0.25
    cam_source: str = "auto"

    def __post_init__(self):
        self.activation_thresholds = tuple(self.activation_thresholds)
        if not self.activation_thresholds:
            raise ValueError("activation_thresholds must be nonempty")
        if any(not 0.0 < t < 1.0 for t in self.activation_thresholds):
            raise ValueError("activation thresholds must lie in (0, 1)")
        if not 0.0 < self.nms_tiou < 1.0:
            raise ValueError("nms_tiou must lie in (0, 1)")
        if self.outer_margin < 0:
            raise ValueError("outer_margin must be >= 0")
        if self.cam_source not in CAM_SOURCES:
            raise ValueError(f"cam_source must be one of {CAM_SOURCES}")


def predict_video_classes(scores: np.ndarray, class_threshold: float) -> list[int]:
    """Foreground classes whose video probability reaches the threshold.

    Background (last entry) never qualifies. When nothing passes, the best
    foreground class is returned so every video yields at least one prediction.
    """
    foreground = np.asarray(scores, dtype=np.float64)[:-1]
    picked = [c for c in range(len(foreground)) if foreground[c] >= class_threshold]
    if not picked:
        picked = [int(np.argmax(foreground))]
    return picked


def _runs(active: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as inclusive (first, last) index pairs."""
    padded = np.concatenate([[False], active, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [(int(edges[i]), int(edges[i + 1]) - 1) for i in range(0, len(edges), 2)]


def generate_proposals(
    cam: np.ndarray, classes: list[int], config: InferenceConfig, duration: float
) -> list[Proposal]:
    """Multi-threshold proposals for the given classes from a (T, C+1) CAM.

    Runs found at several thresholds coincide often; each distinct interval is
    emitted once per class. A constant column has no contrast and produces
    nothing.
    """
    if not classes:
        raise ValueError("classes must be nonempty")
    cam = np.asarray(cam, dtype=np.float64)
    num_segments = cam.shape[0]
    scale = duration / num_segments
    out = []
    for class_id in classes:
        column = cam[:, class_id]
        lo, hi = column.min(), column.max()
        if hi == lo:
            continue
        norm = (column - lo) / (hi - lo)
        seen = set()
        for level in config.activation_thresholds:
            for first, last in _runs(norm > level):
                if (first, last) in seen:
                    continue
                seen.add((first, last))
                length = last - first + 1
                margin = max(1, int(round(config.outer_margin * length)))
                inner = norm[first : last + 1].mean()
                flanks = np.concatenate(
                    [norm[max(0, first - margin) : first], norm[last + 1 : last + 1 + margin]]
                )
                outer = flanks.mean() if len(flanks) else 0.0
                out.append(
                    Proposal(
                        class_id=class_id,
                        confidence=float(inner - outer),
                        start=first * scale,
                        end=(last + 1) * scale,
                    )
                )
    return out


def nms(proposals: list[Proposal], tiou_threshold: float) -> list[Proposal]:
    """Greedy class-wise suppression; output sorted by descending confidence."""
    kept: list[Proposal] = []
    by_class: dict[int, list[Proposal]] = {}
    for prop in proposals:
        by_class.setdefault(prop.class_id, []).append(prop)
    for class_id in sorted(by_class):
        pool = sorted(by_class[class_id], key=lambda p: (-p.confidence, p.start))
        chosen: list[Proposal] = []
        for prop in pool:
            if all(
                tiou((prop.start, prop.end), (c.start, c.end)) <= tiou_threshold
                for c in chosen
            ):
                chosen.append(prop)
        kept.extend(chosen)
    kept.sort(key=lambda p: (-p.confidence, p.start, p.class_id))
    return kept


def localize_video(
    model: LocalizationNetwork,
    features: np.ndarray,
    duration: float,
    num_segments: int,
    config: InferenceConfig,
    summary: torch.Tensor | None = None,
) -> list[Proposal]:
    """Proposals for one video from raw (T0, D) features."""
    resampled = sample_segments(features, num_segments)
    x = torch.as_tensor(resampled, dtype=DTYPE)
    with torch.no_grad():
        weighted, scores = model.localize(x, summary=summary, source=config.cam_source)
    classes = predict_video_classes(scores.numpy(), config.class_threshold)
    proposals = generate_proposals(weighted.numpy(), classes, config, duration)
    return nms(proposals, config.nms_tiou)


def run_inference(
    model: LocalizationNetwork,
    dataset: Dataset,
    num_segments: int,
    config: InferenceConfig,
    summary: torch.Tensor | None = None,
) -> dict[str, list[Proposal]]:
    """Proposals for every video in the dataset, keyed by video id."""
    was_training = model.training
    model.eval()
    results = {}
    for video in dataset.videos:
        results[video.video_id] = localize_video(
            model, video.features, video.duration, num_segments, config, summary=summary
        )
    if was_training:
        model.train()
    return results


def proposals_to_records(
    proposals_by_video: dict[str, list[Proposal]], class_names: list[str]
) -> list[dict]:
    """Flatten to the line-record form used by the proposal file format."""
    records = []
    for video_id in sorted(proposals_by_video):
        for prop in proposals_by_video[video_id]:
            records.append(
                {
                    "video_id": video_id,
                    "class_name": class_names[prop.class_id],
                    "start_sec": prop.start,
                    "end_sec": prop.end,
                    "confidence": prop.confidence,
                }
            )
    return records


def records_to_proposals(
    records: list[dict], class_names: list[str]
) -> dict[str, list[Proposal]]:
    """Inverse of proposals_to_records; unknown class names are an error."""
    out: dict[str, list[Proposal]] = {}
    for rec in records:
        name = rec["class_name"]
        if name not in class_names:
            raise ValueError(f"proposal class '{name}' not in the class list")
        out.setdefault(rec["video_id"], []).append(
            Proposal(
                class_id=class_names.index(name),
                confidence=float(rec["confidence"]),
                start=float(rec["start_sec"]),
                end=float(rec["end_sec"]),
            )
        )
    return out
