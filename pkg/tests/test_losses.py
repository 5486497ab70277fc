import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lanesegkit.assignment import Assignment
from lanesegkit.core import LineType
from lanesegkit.losses import (
    LossParts,
    LossWeights,
    ce_linetype,
    focal,
    l1_vec,
    mask_loss,
    topology_loss,
    total_loss,
)

from conftest import shifted, straight_segment


class TestFocal:
    def test_perfect_prediction_vanishes(self):
        assert focal(1.0, 1) == pytest.approx(0.0, abs=1e-12)
        assert focal(0.0, 0) == pytest.approx(0.0, abs=1e-12)

    def test_half_probability_value(self):
        # -alpha (1 - p_t)^gamma ln p_t at p_t = 1/2
        expected = 0.25 * 0.25 * math.log(2.0)
        assert focal(0.5, 1) == pytest.approx(expected, rel=1e-12)

    def test_reduces_to_cross_entropy(self):
        for p in (0.2, 0.5, 0.9):
            assert focal(p, 1, alpha=1.0, gamma=0.0) == pytest.approx(-math.log(p), rel=1e-9)

    def test_rejects_bad_target(self):
        with pytest.raises(ValueError):
            focal(0.5, 2)

    @given(st.floats(0.0, 1.0, allow_nan=False))
    def test_nonnegative(self, p):
        assert focal(p, 1) >= 0.0
        assert focal(p, 0) >= 0.0

    def test_monotone_decreasing_in_pt(self):
        ps = np.linspace(0.01, 0.99, 99)
        vals = [focal(p, 1) for p in ps]
        assert all(a > b for a, b in zip(vals, vals[1:]))


class TestL1Vec:
    def test_identical_zero(self):
        seg = straight_segment(0)
        assert l1_vec(seg, seg) == 0.0

    def test_x_shift_is_one_third(self):
        seg = straight_segment(0)
        assert l1_vec(shifted(seg, dx=1.0), seg) == pytest.approx(1.0 / 3.0)

    def test_uniform_shift_is_one(self):
        seg = straight_segment(0)
        assert l1_vec(shifted(seg, 1.0, 1.0, 1.0), seg) == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            l1_vec(np.zeros((3, 10, 3)), np.zeros((3, 9, 3)))


class TestMaskLoss:
    def test_saturated_logits_vanish(self):
        target = np.zeros((4, 4))
        target[:2] = 1.0
        logits = np.where(target == 1.0, 40.0, -40.0)
        assert mask_loss(logits, target) == pytest.approx(0.0, abs=1e-9)

    def test_half_prediction_dice_closed_form(self):
        h = w = 6
        target = np.zeros((h, w))
        target[: h // 2] = 1.0  # half ones
        logits = np.zeros((h, w))  # sigmoid -> 0.5 everywhere
        t_sum = target.sum()
        expected_dice = 1.0 - (t_sum + 1.0) / (0.5 * h * w + t_sum + 1.0)
        got = mask_loss(logits, target, lam_ce=0.0, lam_dice=1.0)
        assert got == pytest.approx(expected_dice, rel=1e-12)

    def test_disjoint_hard_masks(self):
        target = np.zeros((4, 4))
        target[:2] = 1.0
        logits = np.where(target == 1.0, -40.0, 40.0)
        dice = mask_loss(logits, target, lam_ce=0.0, lam_dice=1.0)
        assert dice == pytest.approx(1.0 - 1.0 / (8 + 8 + 1.0), rel=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mask_loss(np.zeros((2, 2)), np.zeros((3, 2)))


class TestCeLinetype:
    def test_one_hot_correct(self):
        hot = np.array([0.0, 1.0, 0.0])
        assert ce_linetype(hot, hot, LineType.SOLID, LineType.SOLID) == \
            pytest.approx(0.0, abs=1e-9)

    def test_uniform_is_ln3(self):
        u = np.full(3, 1.0 / 3.0)
        got = ce_linetype(u, u, LineType.SOLID, LineType.DASHED)
        assert got == pytest.approx(math.log(3.0), rel=1e-12)

    def test_half_correct(self):
        hot = np.array([0.0, 1.0, 0.0])
        u = np.full(3, 1.0 / 3.0)
        got = ce_linetype(hot, u, LineType.SOLID, LineType.DASHED)
        assert got == pytest.approx(math.log(3.0) / 2.0, rel=1e-12)

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            ce_linetype(np.array([0.5, 0.5, 0.5]), np.full(3, 1 / 3),
                        LineType.SOLID, LineType.SOLID)


def _identity_assignment(n):
    return Assignment(
        pairs=tuple((i, i) for i in range(n)),
        unmatched_preds=(),
        unmatched_gts=(),
        total_cost=0.0,
    )


class TestTopologyLoss:
    def test_perfect_match_vanishes(self):
        gt = np.array([[0.0, 1.0], [0.0, 0.0]])
        eps = 1e-7
        pred = np.clip(gt, eps, 1 - eps)
        loss = topology_loss(pred, gt, _identity_assignment(2))
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_uniform_scores_on_empty_graph(self):
        n = 4
        pred = np.full((n, n), 0.5)
        gt = np.zeros((n, n))
        loss = topology_loss(pred, gt, _identity_assignment(n))
        assert loss == pytest.approx(focal(0.5, 0), rel=1e-12)

    def test_unmatched_predictions_get_zero_target(self):
        gt = np.array([[0.0, 1.0], [0.0, 0.0]])
        pred = np.full((3, 3), 0.4)
        a = Assignment(pairs=((0, 0), (1, 1)), unmatched_preds=(2,),
                       unmatched_gts=(), total_cost=0.0)
        expected = (focal(0.4, 1) + 5 * focal(0.4, 0)) / 6
        assert topology_loss(pred, gt, a) == pytest.approx(expected, rel=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(11)
        n = 5
        gt = (rng.uniform(0, 1, (n, n)) > 0.6).astype(float)
        np.fill_diagonal(gt, 0.0)
        scores = rng.uniform(0.05, 0.95, (n, n))
        base = topology_loss(scores, gt, _identity_assignment(n))
        perm = rng.permutation(n)
        scores_p = scores[np.ix_(perm, perm)]
        a = Assignment(pairs=tuple((i, int(perm[i])) for i in range(n)),
                       unmatched_preds=(), unmatched_gts=(), total_cost=0.0)
        assert topology_loss(scores_p, gt, a) == pytest.approx(base, rel=1e-12)


class TestTotalLoss:
    def test_all_zero(self):
        assert total_loss(LossParts()) == 0.0

    def test_paper_weights_all_ones(self):
        parts = LossParts(vec=1, ce=1, dice=1, cls=1, type=1, top=1)
        assert total_loss(parts) == pytest.approx(12.535, rel=1e-12)

    def test_vec_weight_linearity(self):
        parts = LossParts(vec=2.0)
        w1 = LossWeights()
        w2 = LossWeights(lam_vec=2 * w1.lam_vec)
        assert total_loss(parts, w2) == pytest.approx(2 * total_loss(parts, w1))

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            total_loss(LossParts(vec=float("nan")))

    def test_weights_must_be_nonnegative(self):
        with pytest.raises(ValueError):
            LossWeights(lam_vec=-0.1)
