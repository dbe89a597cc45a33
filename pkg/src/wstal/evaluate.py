"""Temporal IoU, detection average precision, and mAP over threshold grids."""

from __future__ import annotations

from dataclasses import dataclass, field

from .data import GroundTruthSegment

DEFAULT_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)


class EvaluationError(Exception):
    pass


@dataclass
class EvalConfig:
    tiou_grid: tuple = DEFAULT_GRID

    def __post_init__(self):
        self.tiou_grid = tuple(self.tiou_grid)
        if not self.tiou_grid:
            raise ValueError("tiou_grid must be nonempty")
        if any(not 0.0 < t <= 1.0 for t in self.tiou_grid):
            raise ValueError("tiou_grid values must lie in (0, 1]")
        if any(b <= a for a, b in zip(self.tiou_grid, self.tiou_grid[1:])):
            raise ValueError("tiou_grid must be strictly increasing")


def tiou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Intersection over union of two [start, end) intervals."""
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0.0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def average_precision(
    detections: list[tuple[str, float, float, float]],
    ground_truth: list[tuple[str, float, float]],
    threshold: float,
) -> float:
    """Detection AP for one class at one tIoU threshold.

    detections: (video_id, start, end, confidence) tuples, any order; sorted
    internally by descending confidence with (start, video_id) tie-breaks.
    ground_truth: (video_id, start, end) tuples. Each ground-truth segment is
    matchable at most once: a detection becomes a true positive when its best
    unmatched same-video overlap reaches the threshold.
    """
    if not ground_truth:
        return 0.0
    ranked = sorted(detections, key=lambda d: (-d[3], d[1], d[0]))
    matched = [False] * len(ground_truth)
    true_positives = 0
    precision_sum = 0.0
    for rank, (video_id, start, end, _conf) in enumerate(ranked, start=1):
        best, best_idx = 0.0, -1
        for idx, (gt_video, gt_start, gt_end) in enumerate(ground_truth):
            if matched[idx] or gt_video != video_id:
                continue
            overlap = tiou((start, end), (gt_start, gt_end))
            if overlap > best:
                best, best_idx = overlap, idx
        if best_idx >= 0 and best >= threshold:
            matched[best_idx] = True
            true_positives += 1
            precision_sum += true_positives / rank
    return precision_sum / len(ground_truth)


@dataclass
class EvalResult:
    thresholds: tuple
    map_per_threshold: list  # aligned with thresholds
    average: float
    per_class: dict = field(default_factory=dict)  # threshold -> {class_id: ap}

    def to_records(self) -> list[dict]:
        records = [
            {"tiou": t, "map": m} for t, m in zip(self.thresholds, self.map_per_threshold)
        ]
        records.append({"tiou": "average", "map": self.average})
        return records

    def format_table(self) -> str:
        lines = ["tIoU    mAP", "-----------"]
        for t, m in zip(self.thresholds, self.map_per_threshold):
            lines.append(f"{t:.2f}   {m:.4f}")
        lines.append("-----------")
        lines.append(f"avg    {self.average:.4f}")
        return "\n".join(lines)


def mean_ap(
    proposals_by_video: dict,
    ground_truth: list[GroundTruthSegment],
    num_classes: int,
    config: EvalConfig | None = None,
) -> EvalResult:
    """mAP per tIoU threshold plus the grid average.

    proposals_by_video maps video_id to a list of Proposal objects. Classes
    with no ground truth are skipped; the mean runs over the rest.
    """
    config = config or EvalConfig()
    if not ground_truth:
        raise EvaluationError("ground truth is empty; nothing to evaluate")

    gt_by_class: dict[int, list] = {}
    for seg in ground_truth:
        if not 0 <= seg.class_id < num_classes:
            raise EvaluationError(
                f"ground-truth class id {seg.class_id} outside the {num_classes}-class vocabulary"
            )
        gt_by_class.setdefault(seg.class_id, []).append((seg.video_id, seg.start, seg.end))
    det_by_class: dict[int, list] = {c: [] for c in gt_by_class}
    for video_id, proposals in proposals_by_video.items():
        for prop in proposals:
            if prop.class_id in det_by_class:
                det_by_class[prop.class_id].append(
                    (video_id, prop.start, prop.end, prop.confidence)
                )

    class_ids = sorted(gt_by_class)
    maps, per_class = [], {}
    for threshold in config.tiou_grid:
        aps = {
            c: average_precision(det_by_class[c], gt_by_class[c], threshold)
            for c in class_ids
        }
        per_class[threshold] = aps
        total = 0.0
        for c in class_ids:
            total += aps[c]
        maps.append(total / len(class_ids))
    average = sum(maps) / len(maps)
    return EvalResult(
        thresholds=config.tiou_grid,
        map_per_threshold=maps,
        average=average,
        per_class=per_class,
    )
