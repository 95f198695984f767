"""Proposal partition: pseudo ground truths, overlap scoring, and active-set sampling.

Given current model scores for one image, the highest-scoring proposal of
each present class becomes a pseudo ground truth (PGT). Every proposal is
scored by its best IoU against the PGT set and split three ways:

* positive:  score >= fg_iou
* negative:  bg_iou_low <= score < bg_iou_high (hard-ish negatives)
* risk:      everything else, mostly pure background far from any PGT

The active training set takes the best-scoring positives and negatives up to
per-pool quotas derived from the budget, backfills any shortfall with random
risk-set draws, and finally tops up from the unselected pools so the budget
is met whenever the image has enough proposals at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError
from .geometry import Box, ProposalSet, iou_matrix
from .schedule import ScheduleConfig, active_budget

POSITIVE = 1
NEGATIVE = 0
RISK = -1


@dataclass(frozen=True)
class PartitionConfig:
    """Overlap thresholds for the three-way split and the positive quota share."""

    fg_iou: float = 0.5
    bg_iou_high: float = 0.5
    bg_iou_low: float = 0.1
    positive_fraction: float = 0.25

    def __post_init__(self):
        if not (1.0 >= self.fg_iou >= self.bg_iou_high > self.bg_iou_low >= 0.0):
            raise InputError(
                "thresholds must satisfy 1 >= fg_iou >= bg_iou_high > bg_iou_low >= 0, got "
                f"fg_iou={self.fg_iou}, bg_iou_high={self.bg_iou_high}, bg_iou_low={self.bg_iou_low}"
            )
        if not (0.0 < self.positive_fraction < 1.0):
            raise InputError(
                f"positive_fraction must lie in (0, 1), got {self.positive_fraction}"
            )


@dataclass(frozen=True)
class PseudoGroundTruth:
    """Highest-scoring proposal for one present class, used as a surrogate box label."""

    class_id: int
    proposal_index: int
    box: Box
    score: float


@dataclass(frozen=True)
class PartitionResult:
    """Outcome of partitioning one image at one training state.

    ``positives``/``negatives``/``risks`` are disjoint ascending index arrays
    covering every proposal. ``active`` is the ordered sampled training set:
    quota positives, quota negatives, risk backfill, then completion.
    """

    pgts: tuple[PseudoGroundTruth, ...]
    match_scores: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    risks: np.ndarray
    n_pos: int
    n_neg: int
    budget: int
    active: np.ndarray


def select_pgts(
    scores: np.ndarray, labels: Sequence[int], proposals: ProposalSet
) -> tuple[PseudoGroundTruth, ...]:
    """Pick the argmax-scoring proposal of every present class.

    ``scores`` is (C, R) with one row per class; ``labels`` is the binary
    image-level vector. Ties break toward the lowest proposal index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if scores.ndim != 2:
        raise InputError(f"scores must be a (classes, proposals) matrix, got shape {scores.shape}")
    if y.shape != (scores.shape[0],):
        raise InputError(
            f"labels length {y.shape} does not match score rows {scores.shape[0]}"
        )
    if scores.shape[1] != len(proposals):
        raise InputError(
            f"score columns {scores.shape[1]} do not match proposal count {len(proposals)}"
        )
    present = np.flatnonzero(y)
    if present.size == 0:
        raise InputError("image has no present classes; cannot form pseudo ground truths")
    pgts = []
    for c in present:
        idx = int(np.argmax(scores[c]))  # first max wins on ties
        pgts.append(
            PseudoGroundTruth(
                class_id=int(c),
                proposal_index=idx,
                box=proposals[idx],
                score=float(scores[c, idx]),
            )
        )
    return tuple(pgts)


def score_proposals(
    proposals: ProposalSet, pgts: Sequence[PseudoGroundTruth]
) -> np.ndarray:
    """Best IoU of each proposal against any pseudo ground truth box."""
    if len(pgts) == 0:
        raise InputError("need at least one pseudo ground truth to score proposals")
    overlaps = iou_matrix(proposals, [g.box for g in pgts])
    return overlaps.max(axis=1)


def split_by_score(
    match_scores: np.ndarray, cfg: PartitionConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Three-way split of proposal indices by match score.

    Returns ascending ``(positives, negatives, risks)`` index arrays; the
    positive rule is checked first so configurations with fg_iou equal to
    bg_iou_high stay exhaustive.
    """
    s = np.asarray(match_scores, dtype=np.float64)
    if s.ndim != 1:
        raise InputError(f"match scores must be a vector, got shape {s.shape}")
    pos = s >= cfg.fg_iou
    neg = ~pos & (s >= cfg.bg_iou_low) & (s < cfg.bg_iou_high)
    risk = ~pos & ~neg
    return np.flatnonzero(pos), np.flatnonzero(neg), np.flatnonzero(risk)


def label_vector(match_scores: np.ndarray, cfg: PartitionConfig) -> np.ndarray:
    """Per-proposal labels {+1, 0, -1} consistent with :func:`split_by_score`."""
    pos, neg, risk = split_by_score(match_scores, cfg)
    out = np.empty(len(np.asarray(match_scores)), dtype=np.int8)
    out[pos] = POSITIVE
    out[neg] = NEGATIVE
    out[risk] = RISK
    return out


def split_quotas(budget: int, cfg: PartitionConfig) -> tuple[int, int]:
    """Positive/negative slots for a budget: floor for positives, rest negatives."""
    if budget < 1:
        raise InputError(f"budget must be >= 1, got {budget}")
    n_pos = int(math.floor(cfg.positive_fraction * budget))
    return n_pos, int(budget) - n_pos


def _by_score_desc(pool: np.ndarray, match_scores: np.ndarray) -> np.ndarray:
    pool = np.asarray(pool, dtype=np.int64)
    if pool.size == 0:
        return pool
    order = np.lexsort((pool, -match_scores[pool]))
    return pool[order]


def build_active_set(
    positives: np.ndarray,
    negatives: np.ndarray,
    risks: np.ndarray,
    match_scores: np.ndarray,
    n_pos: int,
    n_neg: int,
    budget: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample the ordered active set for one image.

    Selection, in order:

    1. the ``n_pos`` best-scoring positives and ``n_neg`` best-scoring
       negatives (descending score, ties toward the lower index);
    2. uniform draws without replacement from the risk set while short of
       ``budget``; the draws are the first ``k`` entries of
       ``rng.permutation(risks)`` with ``risks`` in ascending index order;
    3. remaining unselected positives/negatives by descending score, so the
       budget is met whenever the image holds at least ``budget`` proposals.

    Stage 3 keeps the warm-up contract (budget close to the full pool means
    the active set is close to the full pool) independent of how the scores
    happen to distribute over the three pools.
    """
    match_scores = np.asarray(match_scores, dtype=np.float64)
    pos_sorted = _by_score_desc(positives, match_scores)
    neg_sorted = _by_score_desc(negatives, match_scores)
    take_pos = pos_sorted[: max(n_pos, 0)]
    take_neg = neg_sorted[: max(n_neg, 0)]
    parts = [take_pos, take_neg]
    shortfall = int(budget) - take_pos.size - take_neg.size
    risks_asc = np.sort(np.asarray(risks, dtype=np.int64))
    if shortfall > 0 and risks_asc.size > 0:
        drawn = rng.permutation(risks_asc)[: min(shortfall, risks_asc.size)]
        parts.append(drawn)
        shortfall -= drawn.size
    if shortfall > 0:
        leftovers = np.concatenate([pos_sorted[max(n_pos, 0):], neg_sorted[max(n_neg, 0):]])
        # positives always outscore negatives (fg_iou >= bg_iou_high), so one
        # score sort preserves each pool's internal order
        parts.append(_by_score_desc(leftovers, match_scores)[:shortfall])
    return np.concatenate(parts).astype(np.int64, copy=False)


def generate(
    proposals: ProposalSet,
    scores: np.ndarray,
    labels: Sequence[int],
    schedule_cfg: ScheduleConfig,
    theta: float,
    partition_cfg: PartitionConfig,
    rng: np.random.Generator,
) -> PartitionResult:
    """Full partition pipeline for one image at one training state.

    Composes PGT selection, overlap scoring, the three-way split, budget and
    quota computation, and active-set sampling. Deterministic given the
    generator state.
    """
    pgts = select_pgts(scores, labels, proposals)
    match_scores = score_proposals(proposals, pgts)
    positives, negatives, risks = split_by_score(match_scores, partition_cfg)
    budget = active_budget(schedule_cfg, theta, len(proposals))
    n_pos, n_neg = split_quotas(budget, partition_cfg)
    active = build_active_set(
        positives, negatives, risks, match_scores, n_pos, n_neg, budget, rng
    )
    return PartitionResult(
        pgts=pgts,
        match_scores=match_scores,
        positives=positives,
        negatives=negatives,
        risks=risks,
        n_pos=n_pos,
        n_neg=n_neg,
        budget=budget,
        active=active,
    )
