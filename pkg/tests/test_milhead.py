"""MIL head tests: softmax streams, losses, labels, and gradient checks."""

import math

import numpy as np
import pytest

from activeprop import (
    Box,
    InputError,
    MilModel,
    ProposalSet,
    PseudoGroundTruth,
    RefinementLabels,
    assign_refinement_labels,
    class_softmax,
    detection_softmax,
    forward,
    fuse_streams,
    image_level_loss,
    loss_and_gradients,
    refinement_loss,
    total_loss,
)


class TestSoftmaxStreams:
    def test_single_class_is_all_ones(self):
        out = class_softmax(np.array([[1.0, -3.0, 7.0]]))
        np.testing.assert_allclose(out, 1.0)

    def test_symmetric_column(self):
        out = class_softmax(np.array([[0.0], [0.0]]))
        np.testing.assert_allclose(out, [[0.5], [0.5]])

    def test_closed_form_column(self):
        out = class_softmax(np.array([[math.log(3)], [math.log(1)]]))
        np.testing.assert_allclose(out[:, 0], [0.75, 0.25], atol=1e-12)

    def test_single_proposal_is_all_ones(self):
        out = detection_softmax(np.array([[2.0], [-1.0]]))
        np.testing.assert_allclose(out, 1.0)

    def test_uniform_row(self):
        out = detection_softmax(np.zeros((1, 4)))
        np.testing.assert_allclose(out, 0.25)

    def test_closed_form_row(self):
        out = detection_softmax(np.array([[math.log(2), 0.0, 0.0]]))
        np.testing.assert_allclose(out[0], [0.5, 0.25, 0.25], atol=1e-12)

    def test_stochasticity(self):
        rng = np.random.default_rng(51)
        for _ in range(50):
            m = rng.normal(scale=5, size=(int(rng.integers(1, 8)), int(rng.integers(1, 30))))
            np.testing.assert_allclose(class_softmax(m).sum(axis=0), 1.0, atol=1e-12)
            np.testing.assert_allclose(detection_softmax(m).sum(axis=1), 1.0, atol=1e-12)

    def test_overflow_safety(self):
        m = np.array([[1000.0, -1000.0], [-1000.0, 1000.0]])
        out = class_softmax(m)
        assert np.all(np.isfinite(out))

    def test_non_finite_rejected(self):
        with pytest.raises(InputError):
            class_softmax(np.array([[np.nan, 1.0]]))


class TestFuse:
    def test_single_class_uniform_detection(self):
        s = class_softmax(np.zeros((1, 5)))
        d = detection_softmax(np.random.default_rng(0).normal(size=(1, 5)))
        out = fuse_streams(s, d)
        assert out.image_scores[0] == pytest.approx(1.0, abs=1e-12)

    def test_hand_multiplied_two_by_two(self):
        s = np.array([[1.0, 1.0], [0.0, 0.0]])
        d = np.full((2, 2), 0.5)
        out = fuse_streams(s, d)
        np.testing.assert_allclose(out.image_scores, [1.0, 0.0])

    def test_zero_row_annihilates(self):
        s = np.array([[0.0, 0.0], [1.0, 1.0]])
        d = np.full((2, 2), 0.5)
        assert fuse_streams(s, d).image_scores[0] == 0.0

    def test_scores_bounded(self):
        rng = np.random.default_rng(52)
        for _ in range(50):
            shape = (int(rng.integers(1, 6)), int(rng.integers(1, 40)))
            logits_c = rng.normal(scale=4, size=shape)
            logits_d = rng.normal(scale=4, size=shape)
            p = fuse_streams(class_softmax(logits_c), detection_softmax(logits_d)).image_scores
            assert np.all(p >= 0.0) and np.all(p <= 1.0 + 1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InputError):
            fuse_streams(np.zeros((2, 3)), np.zeros((3, 2)))


class TestImageLevelLoss:
    def test_perfect_prediction_is_zero(self):
        assert image_level_loss(np.array([1.0, 0.0]), [1, 0]) == pytest.approx(0.0, abs=1e-6)

    def test_single_class_half(self):
        assert image_level_loss(np.array([0.5]), [1]) == pytest.approx(math.log(2), abs=1e-12)

    def test_two_class_half(self):
        val = image_level_loss(np.array([0.5, 0.5]), [1, 0])
        assert val == pytest.approx(math.log(2), abs=1e-12)

    def test_non_negative(self):
        rng = np.random.default_rng(53)
        for _ in range(100):
            c = int(rng.integers(1, 6))
            p = rng.uniform(0, 1, size=c)
            y = rng.integers(0, 2, size=c)
            assert image_level_loss(p, y) >= 0.0


def make_pgts(entries):
    return tuple(
        PseudoGroundTruth(class_id=c, proposal_index=i, box=b, score=s)
        for c, i, b, s in entries
    )


class TestRefinementLabels:
    def test_pgt_box_gets_its_class_and_score(self):
        box = Box(0, 0, 10, 10)
        ps = ProposalSet((box, Box(40, 40, 50, 50)), "a")
        pgts = make_pgts([(3, 0, box, 0.8)])
        labels = assign_refinement_labels(pgts, ps, num_classes=5)
        assert labels.class_index[0] == 3
        assert labels.weight[0] == pytest.approx(0.8)

    def test_disjoint_proposal_is_background_with_max_pgt_score(self):
        ps = ProposalSet((Box(0, 0, 10, 10), Box(40, 40, 50, 50)), "a")
        pgts = make_pgts(
            [(1, 0, Box(0, 0, 10, 10), 0.3), (2, 0, Box(60, 60, 70, 70), 0.9)]
        )
        labels = assign_refinement_labels(pgts, ps, num_classes=4)
        assert labels.class_index[1] == 4  # background index
        assert labels.weight[1] == pytest.approx(0.9)

    def test_exact_half_iou_is_foreground(self):
        # Candidate [0,0,10,5] vs PGT [0,0,10,10]: intersection 50, union 100.
        ps = ProposalSet((Box(0, 0, 10, 5),), "a")
        pgts = make_pgts([(0, 0, Box(0, 0, 10, 10), 0.5)])
        labels = assign_refinement_labels(pgts, ps, num_classes=2)
        assert labels.class_index[0] == 0

    def test_matches_brute_labeler(self):
        rng = np.random.default_rng(54)
        for _ in range(50):
            n = int(rng.integers(1, 60))
            boxes = []
            for _ in range(n):
                x1, y1 = rng.uniform(0, 50, size=2)
                w, h = rng.uniform(1, 30, size=2)
                boxes.append(Box(x1, y1, x1 + w, y1 + h))
            ps = ProposalSet(tuple(boxes), "a")
            g = int(rng.integers(1, 4))
            pgts = make_pgts(
                [
                    (k, 0, boxes[int(rng.integers(0, n))], float(rng.uniform(0, 1)))
                    for k in range(g)
                ]
            )
            labels = assign_refinement_labels(pgts, ps, num_classes=6)
            from activeprop import iou

            for j in range(n):
                overlaps = [iou(boxes[j], p.box) for p in pgts]
                best = max(range(g), key=lambda k: (overlaps[k], -k))
                if overlaps[best] >= 0.5:
                    assert labels.class_index[j] == pgts[best].class_id
                    assert labels.weight[j] == pytest.approx(pgts[best].score)
                else:
                    assert labels.class_index[j] == 6
                    assert labels.weight[j] == pytest.approx(max(p.score for p in pgts))

    def test_no_pgts_rejected(self):
        ps = ProposalSet((Box(0, 0, 1, 1),), "a")
        with pytest.raises(InputError):
            assign_refinement_labels((), ps, num_classes=2)


class TestRefinementLoss:
    def test_perfect_probs_zero_loss(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        labels = RefinementLabels(np.array([0, 1]), np.array([1.0, 1.0]), num_classes=1)
        assert refinement_loss(probs, labels, np.array([0, 1])) == pytest.approx(0.0, abs=1e-6)

    def test_single_proposal_half_prob(self):
        probs = np.array([[0.5], [0.5]])
        labels = RefinementLabels(np.array([0]), np.array([1.0]), num_classes=1)
        assert refinement_loss(probs, labels, np.array([0])) == pytest.approx(
            math.log(2), abs=1e-12
        )

    def test_zero_weights_zero_loss(self):
        rng = np.random.default_rng(55)
        probs = class_softmax(rng.normal(size=(3, 7)))
        labels = RefinementLabels(
            rng.integers(0, 3, size=7), np.zeros(7), num_classes=2
        )
        assert refinement_loss(probs, labels, np.arange(7)) == 0.0

    def test_normalizer_is_active_count(self):
        probs = np.array([[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]])
        labels = RefinementLabels(np.array([0, 0, 0]), np.ones(3), num_classes=1)
        full = refinement_loss(probs, labels, np.arange(3))
        two = refinement_loss(probs, labels, np.array([0, 1]))
        assert full == pytest.approx(two)  # mean over active, not sum

    def test_empty_active_rejected(self):
        probs = np.array([[1.0], [0.0]])
        labels = RefinementLabels(np.array([0]), np.ones(1), num_classes=1)
        with pytest.raises(InputError):
            refinement_loss(probs, labels, np.array([], dtype=int))


class TestTotalLoss:
    def test_addition(self):
        assert total_loss(0.5, [0.1, 0.2, 0.3]) == pytest.approx(1.1)

    def test_no_branches(self):
        assert total_loss(1.7, []) == 1.7

    def test_all_zero(self):
        assert total_loss(0.0, [0.0, 0.0]) == 0.0


def random_gradcheck_instance(rng, num_classes=3, n_proposals=7, dim=5, branches=2):
    model = MilModel.initialize(num_classes, dim, branches, rng, scale=0.5)
    features = rng.normal(size=(n_proposals, dim))
    labels = np.zeros(num_classes, dtype=int)
    labels[rng.integers(0, num_classes)] = 1
    branch_labels = []
    branch_actives = []
    for _ in range(branches):
        branch_labels.append(
            RefinementLabels(
                class_index=rng.integers(0, num_classes + 1, size=n_proposals),
                weight=rng.uniform(0.1, 1.0, size=n_proposals),
                num_classes=num_classes,
            )
        )
        size = int(rng.integers(1, n_proposals + 1))
        branch_actives.append(rng.choice(n_proposals, size=size, replace=False))
    return model, features, labels, branch_labels, branch_actives


from oracles import finite_difference_grads


def numeric_grads(model, features, labels, branch_labels, branch_actives):
    def loss_value():
        report, _ = loss_and_gradients(model, features, labels, branch_labels, branch_actives)
        return report.total

    return finite_difference_grads(loss_value, model.param_arrays())


def assert_grads_close(analytic, numeric, rel=1e-4, small=1e-3, abs_tol=1e-7):
    for a, n in zip(analytic, numeric):
        diff = np.abs(a - n)
        scale = np.maximum(np.abs(a), np.abs(n))
        big = scale >= small
        assert np.all(diff[big] <= rel * scale[big])
        assert np.all(diff[~big] <= abs_tol)


class TestGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(56)
        for _ in range(20):
            model, feats, y, bl, ba = random_gradcheck_instance(rng)
            _, grads = loss_and_gradients(model, feats, y, bl, ba)
            numeric = numeric_grads(model, feats, y, bl, ba)
            assert_grads_close(grads.param_arrays(), numeric)

    def test_saturated_minimum_has_tiny_gradient(self):
        # Saturate every prediction at its target; all clamped terms go flat.
        num_classes, dim, n = 2, 4, 3
        rng = np.random.default_rng(57)
        model = MilModel.initialize(num_classes, dim, 1, rng, scale=0.0)
        features = np.eye(n, dim)
        # Class stream: proposal 0 strongly class 0; detection stream puts all
        # class-0 mass on proposal 0. Image labels: class 0 present only.
        model.w_cls[0, 0] = 60.0
        model.w_cls[1, 0] = -60.0
        model.w_cls[0, 1:3] = -60.0
        model.w_cls[1, 1:3] = 60.0
        model.w_det[0, 0] = 60.0
        model.w_det[1, 0] = -60.0
        labels = np.array([1, 0])
        branch_labels = [
            RefinementLabels(np.array([0, 2, 2]), np.ones(3), num_classes)
        ]
        model.w_ref[0][0, 0] = 60.0
        model.w_ref[0][2, 1] = 60.0
        model.w_ref[0][2, 2] = 60.0
        report, grads = loss_and_gradients(
            model, features, labels, branch_labels, [np.arange(3)]
        )
        norm = np.sqrt(sum(float((g ** 2).sum()) for g in grads.param_arrays()))
        assert norm < 1e-6

    def test_non_active_proposals_contribute_nothing(self):
        rng = np.random.default_rng(58)
        model, feats, y, bl, ba = random_gradcheck_instance(rng, branches=1)
        active = np.array([0, 2])
        report, _ = loss_and_gradients(model, feats, y, bl, [active])
        # Perturbing an excluded proposal's features must not move the
        # refinement loss (it can move the base loss, which sees everything).
        feats2 = feats.copy()
        feats2[5] += 10.0
        report2, _ = loss_and_gradients(model, feats2, y, bl, [active])
        assert report.refine == pytest.approx(report2.refine)

    def test_branch_count_mismatch_rejected(self):
        rng = np.random.default_rng(59)
        model, feats, y, bl, ba = random_gradcheck_instance(rng)
        with pytest.raises(InputError):
            loss_and_gradients(model, feats, y, bl[:1], ba)


class TestForwardPass:
    def test_shapes(self):
        rng = np.random.default_rng(60)
        model = MilModel.initialize(4, 6, 3, rng)
        fw = forward(model, rng.normal(size=(9, 6)))
        assert fw.fused.shape == (4, 9)
        assert fw.image_scores.shape == (4,)
        assert len(fw.branch_probs) == 3
        assert fw.branch_probs[0].shape == (5, 9)
        np.testing.assert_allclose(fw.branch_probs[0].sum(axis=0), 1.0, atol=1e-12)
