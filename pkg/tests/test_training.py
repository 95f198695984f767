"""Trainer contracts: baseline behavior, budget curve, determinism, audits."""

import json

import numpy as np
import pytest

from activeprop import (
    InputError,
    PartitionConfig,
    ScheduleConfig,
    SimulatorConfig,
    TrainerConfig,
    TrainingDivergedError,
    build_dataset,
    predict_detections,
    train,
)
from activeprop.synth import SyntheticProposals, WorldSample

SIM = SimulatorConfig(train_scenes=6, test_scenes=2, proposals_per_scene=80)
SCHED = ScheduleConfig(n_min=16)
PART = PartitionConfig()


def small_trainer(**kwargs):
    base = dict(steps=120, batch_size=2, branches=2, learning_rate=0.5, lr_decay_step=None)
    base.update(kwargs)
    return TrainerConfig(**base)


def views(world):
    return [w.training_view() for w in world]


class TestTrainLoop:
    def test_baseline_uses_every_proposal(self):
        world = build_dataset(SIM, 101, "train")
        _, log = train(views(world), SIM.num_classes, SCHED, PART, small_trainer(opg=False), 101)
        assert len(log) == 120
        for row in log:
            assert row["active_size"] == SIM.proposals_per_scene
            assert row["budget"] == SIM.proposals_per_scene

    def test_active_curve_non_increasing_with_floor(self):
        world = build_dataset(SIM, 102, "train")
        _, log = train(views(world), SIM.num_classes, SCHED, PART, small_trainer(opg=True), 102)
        sizes = [row["active_size"] for row in log]
        for earlier, later in zip(sizes[:-1], sizes[1:]):
            assert later <= earlier + 1e-9
        # Plateau at the floor: budget at the end is max(n_min, floor(frac * R)).
        assert sizes[-1] == SCHED.n_min
        assert sizes[0] == SIM.proposals_per_scene - 1  # floor(0.9997 * 80) = 79

    def test_bitwise_deterministic(self):
        world = build_dataset(SIM, 103, "train")
        logs = []
        models = []
        for _ in range(2):
            model, log = train(
                views(world), SIM.num_classes, SCHED, PART, small_trainer(opg=True), 103
            )
            logs.append(json.dumps(log, sort_keys=True))
            models.append(model)
        assert logs[0] == logs[1]
        for a, b in zip(models[0].param_arrays(), models[1].param_arrays()):
            np.testing.assert_array_equal(a, b)

    def test_trainer_never_reads_oracle_fields(self):
        # Corrupt provenance and ground truth; training views are unchanged,
        # so the logs must be identical.
        world = build_dataset(SIM, 104, "train")
        _, log_clean = train(
            views(world), SIM.num_classes, SCHED, PART, small_trainer(opg=True), 104
        )
        corrupted = []
        for w in world:
            corrupted.append(
                WorldSample(
                    scene=w.scene,
                    proposals=SyntheticProposals(
                        proposals=w.proposals.proposals,
                        best_gt_iou=np.zeros_like(w.proposals.best_gt_iou),
                        best_gt_class=np.zeros_like(w.proposals.best_gt_class),
                    ),
                    features=w.features,
                )
            )
        _, log_corrupt = train(
            views(corrupted), SIM.num_classes, SCHED, PART, small_trainer(opg=True), 104
        )
        assert json.dumps(log_clean, sort_keys=True) == json.dumps(log_corrupt, sort_keys=True)

    def test_divergence_raises_with_step(self):
        world = build_dataset(SIM, 105, "train")
        with pytest.raises(TrainingDivergedError) as err:
            train(
                views(world),
                SIM.num_classes,
                SCHED,
                PART,
                small_trainer(learning_rate=1e308),
                105,
            )
        assert err.value.step >= 0

    def test_losses_finite_across_seeds(self):
        for seed in range(5):
            world = build_dataset(SIM, seed, "train")
            _, log = train(
                views(world), SIM.num_classes, SCHED, PART, small_trainer(opg=True), seed
            )
            assert all(np.isfinite(row["loss_total"]) for row in log)

    def test_empty_dataset_rejected(self):
        with pytest.raises(InputError):
            train([], SIM.num_classes, SCHED, PART, small_trainer(), 0)

    def test_too_few_steps_rejected(self):
        with pytest.raises(InputError):
            TrainerConfig(steps=50)

    def test_stable_stage_counts_match_quota_ratio(self):
        # Late in training, with ample pools, the active set is 1:3
        # positives to negatives (pos quota 0.25 of the floor budget).
        world = build_dataset(
            SimulatorConfig(train_scenes=4, proposals_per_scene=400, positive_share=0.06),
            106,
            "train",
        )
        _, log = train(
            views(world),
            SIM.num_classes,
            ScheduleConfig(n_min=32),
            PART,
            small_trainer(opg=True, steps=150),
            106,
        )
        late = [row for row in log if row["theta"] > 0.9 and row["risk_fill"] == 0.0]
        assert late, "expected late steps without risk backfill"
        for row in late:
            assert row["pos_in_active"] == 8.0
            assert row["neg_in_active"] == 24.0


class TestRatioExperiment:
    def test_empty_negative_pool_is_a_config_error(self):
        # Every proposal is the object box itself, so all match scores are
        # 1.0 and the negative pool is empty for any ratio.
        from activeprop import Box, ConfigError, RatioExperimentConfig, ratio_experiment
        from activeprop.geometry import ProposalSet
        from activeprop.synth import (
            SceneObject,
            SyntheticProposals,
            SyntheticScene,
            WorldSample,
        )

        box = Box(10, 10, 40, 40)
        rng = np.random.default_rng(0)
        world = []
        for image_id in range(2):
            scene = SyntheticScene(
                image_id=image_id, width=100.0, height=100.0, num_classes=2,
                objects=(SceneObject(0, box),),
            )
            proposals = ProposalSet(tuple([box] * 12), image_id=image_id)
            feats = rng.normal(size=(12, 4))
            world.append(
                WorldSample(
                    scene=scene,
                    proposals=SyntheticProposals(
                        proposals=proposals,
                        best_gt_iou=np.ones(12),
                        best_gt_class=np.zeros(12, dtype=np.int64),
                    ),
                    features=feats,
                )
            )
        cfg = RatioExperimentConfig(
            ratios=(0.5,), fixed_total=8, seeds=(0,),
            phase_one_steps=100, phase_two_steps=100,
        )
        with pytest.raises(ConfigError) as err:
            ratio_experiment(
                world, world, 2, cfg,
                TrainerConfig(steps=100, branches=0, opg=False),
                PART, SCHED,
            )
        assert "negative pool" in str(err.value)


class TestPrediction:
    def test_detections_deterministic_and_valid(self):
        world = build_dataset(SIM, 107, "train")
        model, _ = train(
            views(world), SIM.num_classes, SCHED, PART, small_trainer(opg=True), 107
        )
        test_world = build_dataset(SIM, 107, "test")
        dets_a = predict_detections(model, views(test_world))
        dets_b = predict_detections(model, views(test_world))
        assert dets_a == dets_b
        assert all(0 <= d.class_id < SIM.num_classes for d in dets_a)
        assert all(np.isfinite(d.confidence) for d in dets_a)

    def test_base_only_model_predicts_from_fused_scores(self):
        world = build_dataset(SIM, 108, "train")
        model, _ = train(
            views(world),
            SIM.num_classes,
            SCHED,
            PART,
            small_trainer(branches=0, opg=False),
            108,
        )
        dets = predict_detections(model, views(world)[:2])
        assert len(dets) > 0
