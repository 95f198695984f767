"""Toy SGD trainer with online active-proposal sampling, plus the ratio study.

Each step forwards whole images through the linear MIL model, chains pseudo
ground truths through the refinement branches (branch k is supervised by
branch k-1's scores; branch 1 by the fused base scores), samples a per-image
per-branch active set under the current budget, and applies momentum SGD on
gradients whose refinement terms are masked to the active sets. With
sampling disabled every proposal stays active, which is the all-proposals
baseline.

The ratio study mirrors the two-phase protocol for measuring how the
positive:negative balance of a fixed-size training set affects accuracy:
phase one trains a base-only model to produce PGTs, phase two retrains
fresh models (base head plus one instance-classification branch) on
per-image proposal sets resampled to each target ratio and scores them on
the test split.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, InputError, TrainingDivergedError
from .evaluation import Detection, evaluate
from .geometry import iou_matrix
from .milhead import (
    MilGradients,
    MilModel,
    forward,
    labels_from_overlaps,
    loss_and_gradients,
)
from .partition import (
    PartitionConfig,
    build_active_set,
    select_pgts,
    split_by_score,
    split_quotas,
)
from .rng import derive_rng
from .schedule import ScheduleConfig, active_budget
from .synth import TrainSample, WorldSample


@dataclass(frozen=True)
class TrainerConfig:
    steps: int = 2000
    batch_size: int = 2
    learning_rate: float = 2.0
    momentum: float = 0.9
    branches: int = 3
    opg: bool = True
    lr_decay_step: int | None = 1500
    lr_decay_factor: float = 0.1
    init_scale: float = 0.01

    def __post_init__(self):
        if self.steps < 100:
            raise InputError(f"training needs at least 100 steps, got {self.steps}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.branches < 0:
            raise InputError(f"branches must be >= 0, got {self.branches}")
        if not (self.learning_rate > 0):
            raise InputError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.momentum < 1.0):
            raise InputError(f"momentum must lie in [0, 1), got {self.momentum}")


def _batch_order(n_samples: int, steps: int, batch_size: int, rng) -> list[list[int]]:
    """Shuffled epoch order, re-shuffled whenever the pool runs dry."""
    batches = []
    pool: list[int] = []
    for _ in range(steps):
        batch = []
        for _ in range(batch_size):
            if not pool:
                pool = list(rng.permutation(n_samples))
            batch.append(int(pool.pop(0)))
        batches.append(batch)
    return batches


def train(
    samples: Sequence[TrainSample],
    num_classes: int,
    schedule_cfg: ScheduleConfig,
    partition_cfg: PartitionConfig,
    trainer_cfg: TrainerConfig,
    seed: int,
) -> tuple[MilModel, list[dict]]:
    """Run the training loop; returns the model and the per-step log.

    Log rows carry the training state, the issued budget, the realized
    active-set size, positive/negative counts inside the active sets, the
    risk-set backfill volume (all averaged over the step's image/branch
    pairs), and the loss breakdown. Raises
    :class:`~activeprop.errors.TrainingDivergedError` on a non-finite loss.
    """
    if len(samples) == 0:
        raise InputError("training needs a non-empty dataset")
    for sample in samples:
        if not np.any(np.asarray(sample.labels) == 1):
            raise InputError(f"image {sample.image_id} has no present classes")
        if not np.all(np.isfinite(sample.features)):
            raise InputError(f"image {sample.image_id} has non-finite features")
    model = MilModel.initialize(
        num_classes,
        samples[0].features.shape[1],
        trainer_cfg.branches,
        derive_rng(seed, "init"),
        trainer_cfg.init_scale,
    )
    velocity = [np.zeros_like(p) for p in model.param_arrays()]
    batches = _batch_order(
        len(samples), trainer_cfg.steps, trainer_cfg.batch_size, derive_rng(seed, "batches")
    )
    log: list[dict] = []
    for step in range(trainer_cfg.steps):
        theta = step / trainer_cfg.steps
        accum = MilGradients.zeros_like(model)
        batch = batches[step]
        stats = {
            "budget": 0.0,
            "active": 0.0,
            "pos": 0.0,
            "neg": 0.0,
            "risk_fill": 0.0,
            "base": 0.0,
            "refine": 0.0,
        }
        pairs = 0
        for sample_idx in batch:
            sample = samples[sample_idx]
            n_proposals = len(sample.proposals)
            try:
                fw = forward(model, sample.features)
            except InputError as exc:
                # Inputs were validated before the loop, so non-finite logits
                # here mean the parameters have blown up.
                raise TrainingDivergedError(step, f"forward pass failed: {exc}") from exc
            prev_scores = fw.fused
            branch_labels = []
            branch_actives = []
            if trainer_cfg.branches == 0:
                # Base-only model: the whole pool is consumed by the base loss.
                stats["budget"] += n_proposals
                stats["active"] += n_proposals
                pairs += 1
            for k in range(1, trainer_cfg.branches + 1):
                pgts = select_pgts(prev_scores, sample.labels, sample.proposals)
                overlaps = iou_matrix(sample.proposals, [g.box for g in pgts])
                branch_labels.append(
                    labels_from_overlaps(overlaps, pgts, num_classes)
                )
                match_scores = overlaps.max(axis=1)
                pos, neg, risk = split_by_score(match_scores, partition_cfg)
                if trainer_cfg.opg:
                    budget = active_budget(schedule_cfg, theta, n_proposals)
                    n_pos, n_neg = split_quotas(budget, partition_cfg)
                    active = build_active_set(
                        pos,
                        neg,
                        risk,
                        match_scores,
                        n_pos,
                        n_neg,
                        budget,
                        derive_rng(seed, "partition", sample.image_id, k, step),
                    )
                else:
                    budget = n_proposals
                    active = np.arange(n_proposals, dtype=np.int64)
                in_pos = np.isin(active, pos, assume_unique=False)
                in_neg = np.isin(active, neg, assume_unique=False)
                stats["budget"] += budget
                stats["pos"] += int(in_pos.sum())
                stats["neg"] += int(in_neg.sum())
                stats["risk_fill"] += int((~in_pos & ~in_neg).sum())
                branch_actives.append(active)
                stats["active"] += active.size
                prev_scores = fw.branch_probs[k - 1][:num_classes, :]
                pairs += 1
            report, grads = loss_and_gradients(
                model, sample.features, sample.labels, branch_labels, branch_actives, fw
            )
            if not np.isfinite(report.total):
                raise TrainingDivergedError(step, f"non-finite loss {report.total}")
            accum.add_scaled(grads, 1.0 / len(batch))
            stats["base"] += report.base
            stats["refine"] += sum(report.refine)
        lr = trainer_cfg.learning_rate
        if trainer_cfg.lr_decay_step is not None and step >= trainer_cfg.lr_decay_step:
            lr *= trainer_cfg.lr_decay_factor
        for param, vel, grad in zip(
            model.param_arrays(), velocity, accum.param_arrays()
        ):
            vel *= trainer_cfg.momentum
            vel += grad
            param -= lr * vel
        if not all(np.all(np.isfinite(p)) for p in model.param_arrays()):
            raise TrainingDivergedError(step, "parameters became non-finite")
        denom = max(pairs, 1)
        log.append(
            {
                "step": step,
                "theta": theta,
                "budget": stats["budget"] / denom,
                "active_size": stats["active"] / denom,
                "pos_in_active": stats["pos"] / denom,
                "neg_in_active": stats["neg"] / denom,
                "risk_fill": stats["risk_fill"] / denom,
                "loss_base": stats["base"] / len(batch),
                "loss_refine": stats["refine"] / len(batch),
                "loss_total": (stats["base"] + stats["refine"]) / len(batch),
            }
        )
    return model, log


def greedy_nms(order: np.ndarray, overlaps: np.ndarray, thresh: float) -> list[int]:
    """Indices kept by greedy suppression, scanning ``order`` best-first."""
    suppressed = np.zeros(overlaps.shape[0], dtype=bool)
    kept: list[int] = []
    for idx in order:
        if suppressed[idx]:
            continue
        kept.append(int(idx))
        suppressed |= overlaps[idx] > thresh
    return kept


def predict_detections(
    model: MilModel,
    samples: Sequence[TrainSample],
    nms_iou: float = 0.5,
    min_confidence: float = 0.0,
) -> list[Detection]:
    """Score every proposal and emit per-class detections after greedy NMS.

    Confidence is the branch-averaged foreground probability, or the fused
    base score for a model without refinement branches.
    """
    detections: list[Detection] = []
    for sample in samples:
        fw = forward(model, sample.features)
        if model.num_branches > 0:
            scores = np.mean(
                [probs[: model.num_classes, :] for probs in fw.branch_probs], axis=0
            )
        else:
            scores = fw.fused
        pairwise = iou_matrix(sample.proposals, list(sample.proposals.boxes))
        for class_id in range(model.num_classes):
            row = scores[class_id]
            order = np.argsort(-row, kind="stable")
            kept = greedy_nms(order, pairwise, nms_iou)
            for i in kept:
                if row[i] >= min_confidence:
                    detections.append(
                        Detection(
                            image_id=sample.image_id,
                            class_id=class_id,
                            box=sample.proposals[i],
                            confidence=float(row[i]),
                        )
                    )
    return detections


@dataclass(frozen=True)
class RatioExperimentConfig:
    """Target positive:negative ratios, the fixed per-image set size, and seeds.

    Phase one (PGT production) and phase two (per-ratio retraining) get their
    own step budgets: phase one long enough for usable pseudo ground truths,
    phase two short enough that the training balance, not asymptotic
    convergence, determines accuracy.
    """

    ratios: tuple[float, ...] = (1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01)
    fixed_total: int = 200
    seeds: tuple[int, ...] = (0, 1, 2)
    phase_one_steps: int = 800
    phase_two_steps: int = 400

    def __post_init__(self):
        if not self.ratios:
            raise InputError("need at least one target ratio")
        for r in self.ratios:
            if not (0.0 < r <= 1.0):
                raise InputError(f"target ratios must lie in (0, 1], got {r}")
        if self.fixed_total < 2:
            raise InputError(f"fixed_total must be >= 2, got {self.fixed_total}")
        if not self.seeds:
            raise InputError("need at least one seed")
        if self.phase_one_steps < 100 or self.phase_two_steps < 100:
            raise InputError("phase budgets need at least 100 steps")


def _resample_pool(
    pool: np.ndarray, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``count`` indices: unique first, then top up with replacement."""
    unique = rng.permutation(pool)[: min(count, pool.size)]
    if unique.size < count:
        extra = rng.choice(pool, size=count - unique.size, replace=True)
        return np.concatenate([unique, extra])
    return unique


def ratio_experiment(
    train_world: Sequence[WorldSample],
    test_world: Sequence[WorldSample],
    num_classes: int,
    exp_cfg: RatioExperimentConfig,
    trainer_cfg: TrainerConfig,
    partition_cfg: PartitionConfig,
    schedule_cfg: ScheduleConfig,
) -> list[dict]:
    """Measure test mAP as a function of the training-set proposal ratio.

    Returns one row per (ratio, seed): ``{"ratio", "seed", "map"}``, in the
    order ratios were given. Phase one trains a base-only model whose PGTs
    split each image's proposals into positive/negative pools; phase two
    resamples every image to ``fixed_total`` proposals at the target
    positive:negative ratio (small pools topped up with replacement) and
    retrains a fresh model with one instance-classification branch on the
    resampled sets. Raises :class:`~activeprop.errors.ConfigError` when a
    needed pool is empty.
    """
    phase_one_cfg = replace(
        trainer_cfg,
        branches=0,
        opg=False,
        steps=exp_cfg.phase_one_steps,
        lr_decay_step=int(exp_cfg.phase_one_steps * 0.75),
    )
    phase_two_cfg = replace(
        trainer_cfg,
        branches=1,
        opg=False,
        steps=exp_cfg.phase_two_steps,
        lr_decay_step=int(exp_cfg.phase_two_steps * 0.75),
    )
    train_views = [w.training_view() for w in train_world]
    test_views = [w.training_view() for w in test_world]
    test_scenes = [w.scene for w in test_world]
    rows: list[dict] = []
    for seed in exp_cfg.seeds:
        phase_one, _ = train(
            train_views, num_classes, schedule_cfg, partition_cfg, phase_one_cfg, seed
        )
        pools = []
        for view in train_views:
            fw = forward(phase_one, view.features)
            pgts = select_pgts(fw.fused, view.labels, view.proposals)
            overlaps = iou_matrix(view.proposals, [g.box for g in pgts])
            match_scores = overlaps.max(axis=1)
            positive = np.flatnonzero(match_scores >= partition_cfg.fg_iou)
            negative = np.flatnonzero(match_scores < partition_cfg.fg_iou)
            pools.append((positive, negative))
        for ratio in exp_cfg.ratios:
            n_pos = max(1, int(round(exp_cfg.fixed_total * ratio / (1.0 + ratio))))
            n_neg = exp_cfg.fixed_total - n_pos
            resampled = []
            for view, (positive, negative) in zip(train_views, pools):
                if positive.size == 0:
                    raise ConfigError(
                        f"image {view.image_id}: positive pool is empty; "
                        f"ratio {ratio} unachievable"
                    )
                if negative.size == 0:
                    raise ConfigError(
                        f"image {view.image_id}: negative pool is empty; "
                        f"ratio {ratio} unachievable"
                    )
                rng = derive_rng(seed, "ratio", repr(float(ratio)), view.image_id)
                idx = np.concatenate(
                    [
                        _resample_pool(positive, n_pos, rng),
                        _resample_pool(negative, n_neg, rng),
                    ]
                )
                resampled.append(
                    TrainSample(
                        image_id=view.image_id,
                        proposals=view.proposals.subset(idx),
                        features=view.features[idx],
                        labels=view.labels,
                    )
                )
            model, _ = train(
                resampled, num_classes, schedule_cfg, partition_cfg, phase_two_cfg, seed
            )
            detections = predict_detections(model, test_views)
            report = evaluate(detections, test_scenes)
            rows.append({"ratio": float(ratio), "seed": int(seed), "map": report.mean_ap})
    return rows
