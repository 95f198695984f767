"""Two-stream MIL scoring head, refinement branches, losses, and analytic gradients.

Score matrices are (classes, proposals). The class stream normalizes each
proposal's scores over classes; the detection stream normalizes each class's
scores over proposals. Their elementwise product is the fused detection
score, and summing it per class yields image-level probabilities trained
with binary cross entropy against the image labels.

Refinement branches are (C+1)-way per-proposal classifiers (last row is
background) supervised by pseudo ground truths and weighted by the PGT
scores; their losses run only over the active proposal set, which is how
the sampled set gates learning.

The toy model is linear on fixed proposal features, so all gradients are
closed-form; they are exact for the clamped losses (clamped terms contribute
zero gradient).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError
from .geometry import ProposalSet, iou_matrix
from .partition import PseudoGroundTruth

PROB_EPS = 1e-7
REFINE_FG_IOU = 0.5


def _check_matrix(values) -> np.ndarray:
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise InputError(f"expected a 2-d score matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InputError("score matrix contains non-finite entries")
    return m


def class_softmax(logits) -> np.ndarray:
    """Normalize over classes for each proposal; every column sums to 1."""
    m = _check_matrix(logits)
    m = m - m.max(axis=0, keepdims=True)
    e = np.exp(m)
    return e / e.sum(axis=0, keepdims=True)


def detection_softmax(logits) -> np.ndarray:
    """Normalize over proposals for each class; every row sums to 1."""
    m = _check_matrix(logits)
    m = m - m.max(axis=1, keepdims=True)
    e = np.exp(m)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class MilHeadOutput:
    """Fused per-proposal detection scores and per-class image scores."""

    fused: np.ndarray
    image_scores: np.ndarray


def fuse_streams(class_probs: np.ndarray, detection_probs: np.ndarray) -> MilHeadOutput:
    """Elementwise product of the two streams, summed per class for image scores.

    Each image score is a detection-weighted average of class probabilities,
    hence always in [0, 1].
    """
    s = np.asarray(class_probs, dtype=np.float64)
    d = np.asarray(detection_probs, dtype=np.float64)
    if s.shape != d.shape:
        raise InputError(f"stream shapes differ: {s.shape} vs {d.shape}")
    fused = s * d
    return MilHeadOutput(fused=fused, image_scores=fused.sum(axis=1))


def image_level_loss(image_scores: np.ndarray, labels: Sequence[int]) -> float:
    """Mean binary cross entropy of image scores against image labels.

    Scores are clamped away from 0 and 1 before the logarithms.
    """
    p = np.clip(np.asarray(image_scores, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise InputError(f"scores shape {p.shape} does not match labels shape {y.shape}")
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


@dataclass(frozen=True)
class RefinementLabels:
    """Per-proposal refinement targets: a class index over C+1 and a weight.

    ``class_index[i] == num_classes`` marks background. Weights are the
    scores of the PGTs that produced the labels; background proposals carry
    the image's maximum PGT score.
    """

    class_index: np.ndarray
    weight: np.ndarray
    num_classes: int


def labels_from_overlaps(
    overlaps: np.ndarray,
    pgts: Sequence[PseudoGroundTruth],
    num_classes: int,
    fg_iou: float = REFINE_FG_IOU,
) -> RefinementLabels:
    """Refinement labels from a precomputed (proposals, PGTs) IoU matrix."""
    best = overlaps.argmax(axis=1)  # first max wins on ties
    best_iou = overlaps[np.arange(overlaps.shape[0]), best]
    pgt_classes = np.array([g.class_id for g in pgts], dtype=np.int64)
    pgt_scores = np.array([g.score for g in pgts], dtype=np.float64)
    fg = best_iou >= fg_iou
    class_index = np.where(fg, pgt_classes[best], num_classes)
    weight = np.where(fg, pgt_scores[best], pgt_scores.max())
    return RefinementLabels(class_index=class_index, weight=weight, num_classes=num_classes)


def assign_refinement_labels(
    pgts: Sequence[PseudoGroundTruth],
    proposals: ProposalSet,
    num_classes: int,
    fg_iou: float = REFINE_FG_IOU,
) -> RefinementLabels:
    """Label every proposal against the PGT set.

    A proposal whose best PGT overlap reaches ``fg_iou`` takes that PGT's
    class and score; everything else is background. Unknown/risky proposals
    are folded into background here; the three-way split only decides which
    proposals train, not what they are called.
    """
    if len(pgts) == 0:
        raise InputError("need at least one pseudo ground truth to assign labels")
    overlaps = iou_matrix(proposals, [g.box for g in pgts])
    return labels_from_overlaps(overlaps, pgts, num_classes, fg_iou)


def refinement_loss(
    probs: np.ndarray, labels: RefinementLabels, active: np.ndarray
) -> float:
    """Weighted cross entropy over the active proposals only.

    ``probs`` is (C+1, R) column-stochastic; the normalizer is the active
    count, so shrinking the active set concentrates, rather than dilutes,
    the per-proposal signal.
    """
    probs = np.asarray(probs, dtype=np.float64)
    active = np.asarray(active, dtype=np.int64)
    if active.size == 0:
        raise InputError("active set is empty; refinement loss is undefined")
    picked = np.clip(probs[labels.class_index[active], active], PROB_EPS, 1.0)
    return float(-(labels.weight[active] * np.log(picked)).sum() / active.size)


def total_loss(base: float, refine: Sequence[float]) -> float:
    return float(base) + float(sum(refine))


@dataclass(frozen=True)
class LossReport:
    base: float
    refine: tuple[float, ...]
    total: float


@dataclass
class MilModel:
    """Linear two-stream head plus linear refinement branches on fixed features."""

    w_cls: np.ndarray
    b_cls: np.ndarray
    w_det: np.ndarray
    b_det: np.ndarray
    w_ref: list[np.ndarray] = field(default_factory=list)
    b_ref: list[np.ndarray] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return self.w_cls.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.w_cls.shape[1]

    @property
    def num_branches(self) -> int:
        return len(self.w_ref)

    @classmethod
    def initialize(
        cls,
        num_classes: int,
        feature_dim: int,
        num_branches: int,
        rng: np.random.Generator,
        scale: float = 0.01,
    ) -> "MilModel":
        def w(rows):
            return scale * rng.standard_normal((rows, feature_dim))

        return cls(
            w_cls=w(num_classes),
            b_cls=np.zeros(num_classes),
            w_det=w(num_classes),
            b_det=np.zeros(num_classes),
            w_ref=[w(num_classes + 1) for _ in range(num_branches)],
            b_ref=[np.zeros(num_classes + 1) for _ in range(num_branches)],
        )

    def param_arrays(self) -> list[np.ndarray]:
        """Parameter tensors in a stable order (shared with MilGradients)."""
        return [self.w_cls, self.b_cls, self.w_det, self.b_det, *self.w_ref, *self.b_ref]

    def clone(self) -> "MilModel":
        return MilModel(
            w_cls=self.w_cls.copy(),
            b_cls=self.b_cls.copy(),
            w_det=self.w_det.copy(),
            b_det=self.b_det.copy(),
            w_ref=[w.copy() for w in self.w_ref],
            b_ref=[b.copy() for b in self.b_ref],
        )


@dataclass(frozen=True)
class ForwardPass:
    """Cached per-image forward products reused by the loss/gradient path."""

    class_probs: np.ndarray
    detection_probs: np.ndarray
    fused: np.ndarray
    image_scores: np.ndarray
    branch_probs: tuple[np.ndarray, ...]


def forward(model: MilModel, features: np.ndarray) -> ForwardPass:
    """Run the base head and every refinement branch on (R, D) features."""
    feats = np.asarray(features, dtype=np.float64)
    xc = model.w_cls @ feats.T + model.b_cls[:, None]
    xd = model.w_det @ feats.T + model.b_det[:, None]
    s = class_softmax(xc)
    d = detection_softmax(xd)
    out = fuse_streams(s, d)
    branch_probs = tuple(
        class_softmax(w @ feats.T + b[:, None]) for w, b in zip(model.w_ref, model.b_ref)
    )
    return ForwardPass(
        class_probs=s,
        detection_probs=d,
        fused=out.fused,
        image_scores=out.image_scores,
        branch_probs=branch_probs,
    )


@dataclass
class MilGradients:
    """Gradient tensors mirroring :meth:`MilModel.param_arrays` order."""

    w_cls: np.ndarray
    b_cls: np.ndarray
    w_det: np.ndarray
    b_det: np.ndarray
    w_ref: list[np.ndarray]
    b_ref: list[np.ndarray]

    @classmethod
    def zeros_like(cls, model: MilModel) -> "MilGradients":
        return cls(
            w_cls=np.zeros_like(model.w_cls),
            b_cls=np.zeros_like(model.b_cls),
            w_det=np.zeros_like(model.w_det),
            b_det=np.zeros_like(model.b_det),
            w_ref=[np.zeros_like(w) for w in model.w_ref],
            b_ref=[np.zeros_like(b) for b in model.b_ref],
        )

    def param_arrays(self) -> list[np.ndarray]:
        return [self.w_cls, self.b_cls, self.w_det, self.b_det, *self.w_ref, *self.b_ref]

    def add_scaled(self, other: "MilGradients", factor: float) -> None:
        for mine, theirs in zip(self.param_arrays(), other.param_arrays()):
            mine += factor * theirs


def loss_and_gradients(
    model: MilModel,
    features: np.ndarray,
    labels: Sequence[int],
    branch_labels: Sequence[RefinementLabels],
    branch_actives: Sequence[np.ndarray],
    fw: ForwardPass | None = None,
) -> tuple[LossReport, MilGradients]:
    """Total loss and its exact gradients for one image.

    Refinement targets and active sets are inputs and treated as constants:
    no gradient flows through PGT selection or sampling, matching how the
    trainer freezes them before each update. Proposals outside a branch's
    active set contribute exactly zero gradient to that branch.
    """
    feats = np.asarray(features, dtype=np.float64)
    if len(branch_labels) != model.num_branches or len(branch_actives) != model.num_branches:
        raise InputError(
            f"expected labels/actives for {model.num_branches} branches, got "
            f"{len(branch_labels)}/{len(branch_actives)}"
        )
    if fw is None:
        fw = forward(model, feats)
    grads = MilGradients.zeros_like(model)
    num_classes = model.num_classes

    # Base head: binary cross entropy on image scores.
    y = np.asarray(labels, dtype=np.float64)
    p = fw.image_scores
    p_clip = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    base = float(-(y * np.log(p_clip) + (1.0 - y) * np.log(1.0 - p_clip)).mean())
    inside = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
    dl_dp = np.where(
        inside, -(y / p_clip - (1.0 - y) / (1.0 - p_clip)) / num_classes, 0.0
    )
    s, d = fw.class_probs, fw.detection_probs
    t = dl_dp[:, None] * s * d
    dxc = t - s * t.sum(axis=0, keepdims=True)
    dxd = dl_dp[:, None] * d * (s - p[:, None])
    grads.w_cls += dxc @ feats
    grads.b_cls += dxc.sum(axis=1)
    grads.w_det += dxd @ feats
    grads.b_det += dxd.sum(axis=1)

    # Refinement branches: weighted softmax cross entropy over active columns.
    refine = []
    for k in range(model.num_branches):
        probs = fw.branch_probs[k]
        lab = branch_labels[k]
        active = np.asarray(branch_actives[k], dtype=np.int64)
        refine.append(refinement_loss(probs, lab, active))
        cols = probs[:, active]
        target = lab.class_index[active]
        picked = cols[target, np.arange(active.size)]
        coef = lab.weight[active] / active.size
        coef = np.where(picked > PROB_EPS, coef, 0.0)  # clamped terms are flat
        dz_active = coef[None, :] * cols
        dz_active[target, np.arange(active.size)] -= coef
        dz = np.zeros_like(probs)
        np.add.at(dz, (slice(None), active), dz_active)
        grads.w_ref[k] += dz @ feats
        grads.b_ref[k] += dz.sum(axis=1)

    report = LossReport(base=base, refine=tuple(refine), total=total_loss(base, refine))
    return report, grads
