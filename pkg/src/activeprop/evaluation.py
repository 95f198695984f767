"""Detection metrics: per-class average precision, mAP, and correct localization.

Matching follows the classic protocol: detections are ranked by confidence
(ties keep input order), each detection greedily claims its best-overlapping
unclaimed ground truth, and a claim counts only at IoU >= the threshold.
Average precision defaults to the all-points interpolation (area under the
precision envelope); the 11-point variant is available behind a flag.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError
from .geometry import Box, iou
from .synth import SyntheticScene


@dataclass(frozen=True)
class Detection:
    image_id: object
    class_id: int
    box: Box
    confidence: float


@dataclass(frozen=True)
class EvalReport:
    """Per-class AP (classes with ground truth only), their mean, and CorLoc."""

    per_class_ap: dict[int, float]
    mean_ap: float
    corloc: float

    def to_dict(self) -> dict:
        return {
            "per_class_ap": {str(k): float(v) for k, v in sorted(self.per_class_ap.items())},
            "map": float(self.mean_ap),
            "corloc": float(self.corloc),
        }


def _ranked(detections: Sequence[Detection]) -> list[Detection]:
    # Stable sort: equal confidences keep their input order.
    return sorted(detections, key=lambda det: -det.confidence)


def average_precision(
    detections: Sequence[Detection],
    gt_boxes: Mapping[object, Sequence[Box]],
    iou_thresh: float = 0.5,
    mode: str = "all_points",
) -> float:
    """AP for one class given its detections and per-image ground-truth boxes.

    ``gt_boxes`` maps image_id to that image's boxes of the class. Raises if
    the class has no ground truth anywhere (AP undefined).
    """
    n_gt = sum(len(v) for v in gt_boxes.values())
    if n_gt == 0:
        raise InputError("average precision undefined for a class with no ground truth")
    if mode not in ("all_points", "voc07"):
        raise InputError(f"unknown AP mode {mode!r}")
    claimed: dict[object, list[bool]] = {
        img: [False] * len(v) for img, v in gt_boxes.items()
    }
    tp = []
    for det in _ranked(detections):
        candidates = gt_boxes.get(det.image_id, ())
        best_j, best_overlap = -1, 0.0
        for j, g in enumerate(candidates):
            overlap = iou(det.box, g)
            if overlap > best_overlap:
                best_overlap, best_j = overlap, j
        if best_j >= 0 and best_overlap >= iou_thresh and not claimed[det.image_id][best_j]:
            claimed[det.image_id][best_j] = True
            tp.append(1.0)
        else:
            tp.append(0.0)
    if not tp:
        return 0.0
    tp_arr = np.array(tp)
    cum_tp = np.cumsum(tp_arr)
    cum_fp = np.cumsum(1.0 - tp_arr)
    recall = cum_tp / n_gt
    precision = cum_tp / (cum_tp + cum_fp)
    if mode == "voc07":
        points = []
        for r in np.linspace(0.0, 1.0, 11):
            mask = recall >= r
            points.append(precision[mask].max() if mask.any() else 0.0)
        return float(np.mean(points))
    # All-points: rectangle area under the running-max precision envelope.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * envelope).sum())


def corloc(
    candidates: Mapping[tuple[object, int], Box],
    scenes: Sequence[SyntheticScene],
    iou_thresh: float = 0.5,
) -> float:
    """Fraction of (image, present class) pairs whose candidate box hits a GT.

    ``candidates`` maps (image_id, class_id) to the single box to judge;
    pairs without a candidate count as misses. Images with no present
    classes contribute no pairs; returns 0.0 when there are none at all.
    """
    pairs = 0
    hits = 0
    for scene in scenes:
        by_class: dict[int, list[Box]] = {}
        for obj in scene.objects:
            by_class.setdefault(obj.class_id, []).append(obj.box)
        for class_id, boxes in sorted(by_class.items()):
            pairs += 1
            box = candidates.get((scene.image_id, class_id))
            if box is not None and any(iou(box, g) >= iou_thresh for g in boxes):
                hits += 1
    return hits / pairs if pairs else 0.0


def top_candidates(
    detections: Iterable[Detection],
) -> dict[tuple[object, int], Box]:
    """Highest-confidence detection per (image, class); input order breaks ties."""
    best: dict[tuple[object, int], tuple[float, Box]] = {}
    for det in detections:
        key = (det.image_id, det.class_id)
        if key not in best or det.confidence > best[key][0]:
            best[key] = (det.confidence, det.box)
    return {key: box for key, (_, box) in best.items()}


def evaluate(
    detections: Sequence[Detection],
    scenes: Sequence[SyntheticScene],
    iou_thresh: float = 0.5,
    mode: str = "all_points",
) -> EvalReport:
    """mAP over classes with ground truth, plus CorLoc, for one detection set.

    Classes that never occur in the scenes are skipped with a warning; their
    AP is undefined and does not enter the mean.
    """
    if not scenes:
        raise InputError("evaluation needs at least one scene")
    num_classes = scenes[0].num_classes
    per_class: dict[int, float] = {}
    for class_id in range(num_classes):
        gt_boxes = {
            scene.image_id: [o.box for o in scene.objects if o.class_id == class_id]
            for scene in scenes
        }
        if sum(len(v) for v in gt_boxes.values()) == 0:
            warnings.warn(
                f"class {class_id} has no ground truth; excluded from mAP",
                stacklevel=2,
            )
            continue
        class_dets = [d for d in detections if d.class_id == class_id]
        per_class[class_id] = average_precision(class_dets, gt_boxes, iou_thresh, mode)
    mean_ap = float(np.mean(list(per_class.values()))) if per_class else 0.0
    loc = corloc(top_candidates(detections), scenes, iou_thresh)
    return EvalReport(per_class_ap=per_class, mean_ap=mean_ap, corloc=loc)
