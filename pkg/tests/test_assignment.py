import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lanesegkit.assignment import (
    PredictedSegment,
    assign,
    focal_matching_cost,
    hungarian,
    matching_cost,
)
from lanesegkit.core import LaneClass, LineType
from lanesegkit.geometry import GridSpec, rasterize_polygon
from lanesegkit.core import polygon_of

from conftest import shifted, straight_segment


def brute_min_assignment(cost: np.ndarray):
    """Exhaustive oracle: minimum over all injections of the smaller side."""
    rows, cols = cost.shape
    if rows <= cols:
        best = min(
            (float(np.sum(cost[np.arange(rows), perm])), perm)
            for perm in itertools.permutations(range(cols), rows)
        )
        return best[0], [(i, j) for i, j in enumerate(best[1])]
    best = min(
        (float(np.sum(cost[perm, np.arange(cols)])), perm)
        for perm in itertools.permutations(range(rows), cols)
    )
    return best[0], sorted((i, j) for j, i in enumerate(best[1]))


class TestHungarian:
    def test_zero_diagonal_identity(self):
        cost = np.ones((3, 3)) - np.eye(3)
        out = hungarian(cost)
        assert out.pairs == ((0, 0), (1, 1), (2, 2))
        assert out.total_cost == 0.0

    def test_two_by_two_prefers_swap(self):
        out = hungarian(np.array([[1.0, 2.0], [2.0, 4.0]]))
        assert set(out.pairs) == {(0, 1), (1, 0)}
        assert out.total_cost == 4.0

    def test_seven_by_seven_optimal(self):
        rng = np.random.default_rng(7)
        cost = rng.uniform(0, 10, (7, 7))
        expected, _ = brute_min_assignment(cost)
        assert hungarian(cost).total_cost == expected

    def test_rectangular_shapes(self):
        rng = np.random.default_rng(1)
        for rows, cols in [(2, 5), (5, 2), (1, 4), (4, 1), (3, 3)]:
            cost = rng.uniform(-5, 5, (rows, cols))
            out = hungarian(cost)
            expected, _ = brute_min_assignment(cost)
            assert len(out.pairs) == min(rows, cols)
            assert out.total_cost == pytest.approx(expected, abs=1e-12)
            assert len(out.unmatched_preds) == rows - min(rows, cols)
            assert len(out.unmatched_gts) == cols - min(rows, cols)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            hungarian(np.array([[1.0, np.nan], [0.0, 1.0]]))

    @given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 6))
    @settings(max_examples=60, deadline=None)
    def test_matches_brute_force(self, seed, rows, cols):
        cost = np.random.default_rng(seed).normal(0, 3, (rows, cols))
        expected, _ = brute_min_assignment(cost)
        assert hungarian(cost).total_cost == pytest.approx(expected, abs=1e-12)

    @given(st.integers(0, 2**31 - 1), st.floats(-10, 10, allow_nan=False))
    @settings(max_examples=30, deadline=None)
    def test_constant_shift_keeps_argmin(self, seed, shift):
        cost = np.random.default_rng(seed).uniform(0, 1, (4, 4))
        base = hungarian(cost)
        moved = hungarian(cost + shift)
        assert moved.pairs == base.pairs
        assert moved.total_cost == pytest.approx(base.total_cost + 4 * shift, abs=1e-9)


def _pred_of(segment, class_probs=(1.0, 0.0), left=None, right=None, mask_logits=None):
    def one_hot(t):
        v = np.full(3, 1e-9)
        v[t.index] = 1.0 - 2e-9
        return v

    return PredictedSegment(
        segment=segment,
        class_probs=np.array(class_probs, float),
        left_type_probs=one_hot(left or segment.left_type),
        right_type_probs=one_hot(right or segment.right_type),
        mask_logits=mask_logits,
    )


class TestMatchingCost:
    def test_perfect_prediction_cost(self):
        gt = straight_segment(0)
        pred = _pred_of(gt)
        from lanesegkit.losses import LossWeights

        w = LossWeights()
        total = matching_cost(pred, gt)
        assert total == pytest.approx(w.lam_cls * focal_matching_cost(1.0), abs=1e-6)

    def test_wrong_type_adds_exact_ce_delta(self):
        gt = straight_segment(0, left_type=LineType.SOLID)
        good = _pred_of(gt)
        bad = _pred_of(gt, left=LineType.DASHED)
        from lanesegkit.losses import LossWeights, ce_linetype

        w = LossWeights()
        delta = matching_cost(bad, gt) - matching_cost(good, gt)
        ce_delta = (
            ce_linetype(bad.left_type_probs, bad.right_type_probs,
                        gt.left_type, gt.right_type)
            - ce_linetype(good.left_type_probs, good.right_type_probs,
                          gt.left_type, gt.right_type)
        )
        assert delta == pytest.approx(w.lam_type * ce_delta, abs=1e-9)

    def test_translation_adds_l1_term(self):
        gt = straight_segment(0)
        moved = _pred_of(shifted(gt, dx=1.0))
        base = _pred_of(gt)
        from lanesegkit.losses import LossWeights

        w = LossWeights()
        delta = matching_cost(moved, gt) - matching_cost(base, gt)
        # 1 m x-shift moves one of three coordinates: l1_vec = 1/3
        assert delta == pytest.approx(w.lam_vec * (1.0 / 3.0), abs=1e-9)

    def test_mask_term_optional(self):
        gt = straight_segment(0)
        grid = GridSpec(h=10, w=10, x_range=(-20, 20), y_range=(-10, 10))
        gt_mask = rasterize_polygon(polygon_of(gt), grid)
        with_mask = _pred_of(gt, mask_logits=np.zeros((10, 10)))
        without = _pred_of(gt)
        assert matching_cost(with_mask, gt, gt_mask) > matching_cost(without, gt, gt_mask)
        assert matching_cost(without, gt, gt_mask) == matching_cost(without, gt, None)

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        gt = straight_segment(0)
        for _ in range(50):
            probs = rng.uniform(0, 1, 2)
            noisy = _pred_of(shifted(gt, *rng.normal(0, 3, 3)), class_probs=probs)
            assert matching_cost(noisy, gt) >= 0.0

    def test_focal_cost_monotone_decreasing(self):
        ps = np.linspace(0.01, 0.99, 50)
        costs = [focal_matching_cost(p) for p in ps]
        assert all(a > b for a, b in zip(costs, costs[1:]))
        assert focal_matching_cost(1.0) == pytest.approx(0.0, abs=1e-6)


class TestAssign:
    def test_identity_on_equal_lists(self):
        gts = [straight_segment(i, y=3.5 * i) for i in range(3)]
        out = assign([_pred_of(g) for g in gts], gts,
                     lambda p, g: matching_cost(p, g))
        assert out.pairs == ((0, 0), (1, 1), (2, 2))

    def test_size_rule(self):
        gts = [straight_segment(i, y=3.5 * i) for i in range(3)]
        preds = [_pred_of(g) for g in gts[:2]]
        out = assign(preds, gts, lambda p, g: matching_cost(p, g))
        assert len(out.pairs) == 2
        assert len(out.unmatched_gts) == 1

    def test_recovers_shuffle(self):
        gts = [straight_segment(i, y=3.5 * i) for i in range(4)]
        order = [2, 0, 3, 1]
        preds = [_pred_of(gts[i]) for i in order]
        out = assign(preds, gts, lambda p, g: matching_cost(p, g))
        assert out.pairs == tuple((k, order[k]) for k in range(4))

    def test_empty_sides(self):
        out = assign([], [straight_segment(0)], lambda p, g: 0.0)
        assert out.pairs == ()
        assert out.unmatched_gts == (0,)
        assert out.total_cost == 0.0
