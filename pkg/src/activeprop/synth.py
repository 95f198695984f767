"""Synthetic weak-supervision world: scenes, proposals, and proposal features.

Scenes hold ground-truth objects on a fixed canvas. Proposals are a mixture
of tightly jittered copies of the objects (a small minority, mimicking the
roughly 1-in-100 positive share of real weakly supervised proposal sets),
loosely jittered "part" boxes with intermediate overlap, and pure background
boxes. Each proposal carries hidden provenance (best ground-truth IoU and
class) for oracle checks only; training code never reads it: trainers
consume :class:`TrainSample`, which strips the scene and the provenance.

Features are linear-model-friendly by construction: an overlap-weighted
class prototype plus isotropic noise, with background at the zero prototype.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import GenerationError, InputError
from .geometry import Box, ProposalSet, iou, iou_matrix
from .rng import derive_rng

TEST_ID_BASE = 1_000_000


@dataclass(frozen=True)
class SimulatorConfig:
    """Desk-scale world parameters."""

    num_classes: int = 4
    canvas_width: float = 100.0
    canvas_height: float = 100.0
    objects_min: int = 1
    objects_max: int = 3
    object_size_min: float = 15.0
    object_size_max: float = 40.0
    proposals_per_scene: int = 500
    positive_share: float = 0.01
    part_share: float = 0.15
    positive_jitter: float = 0.15
    feature_dim: int = 16
    feature_noise: float = 0.15
    context_leak: float = 0.0
    train_scenes: int = 200
    test_scenes: int = 100

    def __post_init__(self):
        if self.num_classes < 1:
            raise InputError(f"need at least one class, got {self.num_classes}")
        if not (1 <= self.objects_min <= self.objects_max):
            raise InputError(
                f"invalid object count range [{self.objects_min}, {self.objects_max}]"
            )
        if not (0.0 < self.object_size_min <= self.object_size_max):
            raise InputError("invalid object size range")
        if self.object_size_max > min(self.canvas_width, self.canvas_height):
            raise InputError("objects larger than the canvas cannot be placed")
        if not (0.0 < self.positive_share < 1.0 and 0.0 <= self.part_share < 1.0):
            raise InputError("positive_share must be in (0,1) and part_share in [0,1)")
        if self.positive_share + self.part_share >= 1.0:
            raise InputError("positive and part shares must leave room for background")
        if self.feature_dim < self.num_classes:
            raise InputError(
                f"feature_dim {self.feature_dim} must be >= num_classes {self.num_classes}"
            )


@dataclass(frozen=True)
class SceneObject:
    class_id: int
    box: Box


@dataclass(frozen=True)
class SyntheticScene:
    """Ground truth for one image; consumed by generation and evaluation only."""

    image_id: int
    width: float
    height: float
    num_classes: int
    objects: tuple[SceneObject, ...]

    @property
    def labels(self) -> np.ndarray:
        y = np.zeros(self.num_classes, dtype=np.int64)
        for obj in self.objects:
            y[obj.class_id] = 1
        return y


@dataclass(frozen=True)
class SyntheticProposals:
    """Proposal set plus hidden provenance (oracle-only fields)."""

    proposals: ProposalSet
    best_gt_iou: np.ndarray
    best_gt_class: np.ndarray


@dataclass(frozen=True)
class TrainSample:
    """Exactly what a trainer may see: boxes, features, image-level labels."""

    image_id: int
    proposals: ProposalSet
    features: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class WorldSample:
    """A scene plus everything generated from it, including oracle-only data."""

    scene: SyntheticScene
    proposals: SyntheticProposals
    features: np.ndarray

    def training_view(self) -> TrainSample:
        return TrainSample(
            image_id=self.scene.image_id,
            proposals=self.proposals.proposals,
            features=self.features,
            labels=self.scene.labels,
        )


def _random_box(rng, cfg: SimulatorConfig, size_min: float, size_max: float) -> Box:
    w = rng.uniform(size_min, size_max)
    h = rng.uniform(size_min, size_max)
    x1 = rng.uniform(0.0, cfg.canvas_width - w)
    y1 = rng.uniform(0.0, cfg.canvas_height - h)
    return Box(x1, y1, x1 + w, y1 + h)


def generate_scene(
    cfg: SimulatorConfig, rng: np.random.Generator, image_id: int
) -> SyntheticScene:
    """Place objects on the canvas with no full containment between any pair."""
    count = int(rng.integers(cfg.objects_min, cfg.objects_max + 1))
    placed: list[SceneObject] = []
    for _ in range(count):
        for _attempt in range(100):
            box = _random_box(rng, cfg, cfg.object_size_min, cfg.object_size_max)
            if not any(
                box.contains(other.box) or other.box.contains(box) for other in placed
            ):
                placed.append(SceneObject(int(rng.integers(0, cfg.num_classes)), box))
                break
        else:
            raise GenerationError(
                f"image {image_id}: could not place object {len(placed) + 1} "
                f"of {count} without containment after 100 attempts"
            )
    return SyntheticScene(
        image_id=image_id,
        width=cfg.canvas_width,
        height=cfg.canvas_height,
        num_classes=cfg.num_classes,
        objects=tuple(placed),
    )


def _jittered_box(
    base: Box,
    spread: float,
    rng: np.random.Generator,
    cfg: SimulatorConfig,
    min_iou: float,
    max_iou: float,
) -> Box:
    """Perturb a box's edges, rejecting until IoU with the base hits [min, max)."""
    w = base.x2 - base.x1
    h = base.y2 - base.y1
    candidate = base
    for _attempt in range(100):
        dx1, dx2 = rng.uniform(-spread, spread, size=2) * w
        dy1, dy2 = rng.uniform(-spread, spread, size=2) * h
        x1 = min(max(base.x1 + dx1, 0.0), cfg.canvas_width - 1e-3)
        y1 = min(max(base.y1 + dy1, 0.0), cfg.canvas_height - 1e-3)
        x2 = min(max(base.x2 + dx2, x1 + 1e-3), cfg.canvas_width)
        y2 = min(max(base.y2 + dy2, y1 + 1e-3), cfg.canvas_height)
        candidate = Box(x1, y1, x2, y2)
        overlap = iou(candidate, base)
        if min_iou <= overlap < max_iou:
            return candidate
    raise GenerationError(
        f"could not jitter a box into IoU [{min_iou}, {max_iou}) after 100 attempts"
    )


def generate_proposals(
    scene: SyntheticScene,
    rng: np.random.Generator,
    n_total: int,
    cfg: SimulatorConfig,
) -> SyntheticProposals:
    """Generate the per-scene proposal mixture and record provenance.

    Roughly ``positive_share`` of the boxes overlap some object at IoU >= 0.5,
    ``part_share`` sit in the intermediate band, and the rest are background
    with IoU below the negative band. Proposal order is shuffled so class
    signal does not correlate with index.
    """
    if n_total < 10 * len(scene.objects):
        raise InputError(
            f"need at least {10 * len(scene.objects)} proposals for "
            f"{len(scene.objects)} objects, got {n_total}"
        )
    n_pos = int(round(cfg.positive_share * n_total))
    n_part = int(round(cfg.part_share * n_total))
    gt_boxes = [obj.box for obj in scene.objects]
    boxes: list[Box] = []
    for i in range(n_pos):
        base = gt_boxes[i % len(gt_boxes)]
        if cfg.positive_jitter == 0.0:
            boxes.append(base)
        else:
            boxes.append(
                _jittered_box(base, cfg.positive_jitter, rng, cfg, 0.5, np.inf)
            )
    for i in range(n_part):
        base = gt_boxes[i % len(gt_boxes)]
        boxes.append(_part_box(base, rng, cfg, gt_boxes))
    while len(boxes) < n_total:
        boxes.append(_background_box(rng, cfg, gt_boxes))
    order = rng.permutation(n_total)
    shuffled = tuple(boxes[int(i)] for i in order)
    proposals = ProposalSet(shuffled, image_id=scene.image_id)
    overlaps = iou_matrix(proposals, gt_boxes)
    best = overlaps.argmax(axis=1)
    best_iou = overlaps[np.arange(n_total), best]
    best_class = np.array([scene.objects[int(j)].class_id for j in best], dtype=np.int64)
    return SyntheticProposals(
        proposals=proposals, best_gt_iou=best_iou, best_gt_class=best_class
    )


def _part_box(
    base: Box, rng: np.random.Generator, cfg: SimulatorConfig, gt_boxes: Sequence[Box]
) -> Box:
    """A box overlapping some object in the intermediate band (best effort)."""
    fallback = None
    for _attempt in range(100):
        try:
            candidate = _jittered_box(base, 0.55, rng, cfg, 0.0, 1.0)
        except GenerationError:
            continue
        best = max(iou(candidate, g) for g in gt_boxes)
        if best >= 0.5:
            continue  # never leak extra positives
        if 0.05 <= best:
            return candidate
        fallback = fallback or candidate
    if fallback is None:
        raise GenerationError("could not produce a part proposal below IoU 0.5")
    return fallback


def _background_box(
    rng: np.random.Generator, cfg: SimulatorConfig, gt_boxes: Sequence[Box]
) -> Box:
    """A box away from every object: best IoU < 0.1 preferred, < 0.5 enforced."""
    fallback = None
    for _attempt in range(100):
        candidate = _random_box(rng, cfg, 8.0, 50.0)
        best = max(iou(candidate, g) for g in gt_boxes)
        if best < 0.1:
            return candidate
        if best < 0.5 and fallback is None:
            fallback = candidate
    if fallback is None:
        raise GenerationError("could not place a background box below IoU 0.5")
    return fallback


def class_prototypes(num_classes: int, feature_dim: int) -> np.ndarray:
    """One unit-axis prototype per class; background is the zero vector."""
    if feature_dim < num_classes:
        raise InputError(f"feature_dim {feature_dim} must be >= num_classes {num_classes}")
    protos = np.zeros((num_classes, feature_dim))
    protos[np.arange(num_classes), np.arange(num_classes)] = 1.0
    return protos


def generate_features(
    scene: SyntheticScene,
    proposals: SyntheticProposals,
    rng: np.random.Generator,
    feature_dim: int,
    noise: float,
    context_leak: float = 0.0,
) -> np.ndarray:
    """(R, D) features: overlap-weighted class prototype plus isotropic noise.

    ``context_leak`` adds a fraction of the mean present-class prototype to
    every proposal in the image, modeling co-occurring context (background
    near an object weakly predicts its class). This is what makes training
    on overwhelming pure-background proposals actively harmful: they teach
    the classifier to call contextual evidence background.
    """
    protos = class_prototypes(scene.num_classes, feature_dim)
    w = proposals.best_gt_iou[:, None]
    base = w * protos[proposals.best_gt_class]
    if context_leak:
        present = sorted({obj.class_id for obj in scene.objects})
        base = base + context_leak * protos[present].mean(axis=0)
    return base + noise * rng.standard_normal(base.shape)


def build_dataset(
    cfg: SimulatorConfig, seed: int, split: str = "train"
) -> list[WorldSample]:
    """Generate a full split deterministically from the global seed."""
    if split == "train":
        count, id_base = cfg.train_scenes, 0
    elif split == "test":
        count, id_base = cfg.test_scenes, TEST_ID_BASE
    else:
        raise InputError(f"unknown split {split!r}")
    samples = []
    for i in range(count):
        image_id = id_base + i
        scene = generate_scene(cfg, derive_rng(seed, "scene", image_id), image_id)
        props = generate_proposals(
            scene,
            derive_rng(seed, "proposals", image_id),
            cfg.proposals_per_scene,
            cfg,
        )
        feats = generate_features(
            scene,
            props,
            derive_rng(seed, "features", image_id),
            cfg.feature_dim,
            cfg.feature_noise,
            cfg.context_leak,
        )
        samples.append(WorldSample(scene=scene, proposals=props, features=feats))
    return samples
