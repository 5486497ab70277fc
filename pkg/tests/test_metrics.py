import numpy as np
import pytest

from lanesegkit.assignment import Assignment
from lanesegkit.core import LaneClass, LaneGraph, LineType, Scene
from lanesegkit.metrics import (
    average_precision,
    d_ls,
    evaluate_centerline,
    evaluate_laneseg,
    evaluate_mapele,
    top_metric,
)
from lanesegkit.preprocess import decompose_to_map_elements, extract_centerlines
from lanesegkit import scenegen

from conftest import scene_of, shifted, straight_segment, transverse_segment


class TestDls:
    def test_identical_zero(self):
        seg = straight_segment(0)
        assert d_ls(seg, seg) == 0.0

    def test_rigid_shift_of_transverse_lane(self):
        # lane runs along y; a 1 m x-shift moves every point exactly 1 m
        # off the original, so Chamfer and Frechet are both 1.0
        gt = transverse_segment(0)
        assert d_ls(shifted(gt, dx=1.0), gt) == pytest.approx(1.0, abs=1e-12)

    def test_reversed_direction_positive(self):
        gt = straight_segment(0)
        rev = straight_segment(0)
        rev = type(rev)(
            id=0,
            centerline=rev.centerline.reversed(),
            left_boundary=rev.left_boundary,
            right_boundary=rev.right_boundary,
            left_type=rev.left_type,
            right_type=rev.right_type,
            cls=rev.cls,
        )
        assert d_ls(rev, gt) > 0.0

    def test_class_mismatch_raises(self):
        lane = straight_segment(0)
        ped = straight_segment(1, cls=LaneClass.PED_CROSSING)
        with pytest.raises(ValueError):
            d_ls(lane, ped)


def _spread_lanes(n, ids=None, conf=1.0):
    ids = ids or range(n)
    return [straight_segment(i, y=8.0 * k, confidence=conf)
            for k, i in enumerate(ids)]


class TestAveragePrecision:
    def test_identical_predictions(self):
        gts = [_spread_lanes(3)]
        preds = [_spread_lanes(3)]
        for t in (1.0, 2.0, 3.0):
            assert average_precision(preds, gts, d_ls, t) == pytest.approx(1.0)

    def test_single_pred_half_recall(self):
        gts = [_spread_lanes(2)]
        preds = [[straight_segment(0, y=0.0, confidence=0.9)]]
        assert average_precision(preds, gts, d_ls, 1.0) == pytest.approx(0.5)

    def test_no_predictions(self):
        gts = [_spread_lanes(2)]
        assert average_precision([[]], gts, d_ls, 3.0) == 0.0

    def test_zero_gt_defined_as_zero(self):
        preds = [[straight_segment(0, confidence=0.5)]]
        assert average_precision(preds, [[]], d_ls, 3.0) == 0.0

    def test_threshold_monotonicity(self):
        gt = scenegen.generate("straight", 3)
        pred = scenegen.perturb(gt, scenegen.PerturbSpec(sigma_pos=0.4, seed=1))
        gts = [[s for s in gt.graph.segments]]
        preds = [[s for s in pred.graph.segments]]
        aps = [average_precision(preds, gts, d_ls, t) for t in (1.0, 2.0, 3.0)]
        assert aps[0] <= aps[1] <= aps[2]

    def test_confidence_rescaling_invariance(self):
        gts = [_spread_lanes(3)]
        rng = np.random.default_rng(0)
        noisy = [shifted(s, dx=float(rng.normal(0, 1)), confidence=c)
                 for s, c in zip(_spread_lanes(3), (0.9, 0.5, 0.2))]
        base = average_precision([noisy], gts, d_ls, 2.0)
        scaled = [shifted(s, confidence=s.confidence * 0.37) for s in noisy]
        assert average_precision([scaled], gts, d_ls, 2.0) == base

    def test_zero_confidence_duplicate_never_raises(self):
        gts = [_spread_lanes(3)]
        rng = np.random.default_rng(5)
        preds = [shifted(s, dx=float(rng.normal(0, 0.8)), confidence=float(c))
                 for s, c in zip(_spread_lanes(3), rng.uniform(0.3, 1.0, 3))]
        base = average_precision([preds], gts, d_ls, 2.0)
        dup = shifted(preds[0], confidence=1e-9, seg_id=99)
        with_dup = average_precision([preds + [dup]], gts, d_ls, 2.0)
        assert with_dup <= base + 1e-12

    def test_tie_broken_by_ascending_id(self):
        gt = [straight_segment(0, y=0.0)]
        close = straight_segment(0, y=0.0, confidence=0.5)
        far = shifted(straight_segment(1, y=0.0, confidence=0.5), dx=2.5, seg_id=1)
        # id 0 ranks first and takes the GT; id 1 becomes FP
        ap = average_precision([[far, close]], [gt], d_ls, 3.0)
        assert ap == pytest.approx(1.0)


class TestTopMetric:
    def test_perfect(self):
        segs = _spread_lanes(3)
        graph = scene_of(segs, edges=[(0, 1), (1, 2)]).graph
        match = Assignment(pairs=((0, 0), (1, 1), (2, 2)), unmatched_preds=(),
                           unmatched_gts=(), total_cost=0.0)
        assert top_metric(graph, graph, match) == 1.0

    def test_no_predicted_edges(self):
        segs = _spread_lanes(2)
        gt = scene_of(segs, edges=[(0, 1)]).graph
        pred = scene_of(segs).graph
        match = Assignment(pairs=((0, 0), (1, 1)), unmatched_preds=(),
                           unmatched_gts=(), total_cost=0.0)
        assert top_metric(pred, gt, match) == 0.0

    def test_hand_case_five_sixths(self):
        # GT: a -> {b, c}; predicted ordered neighbors [b 0.9, d 0.8, c 0.7]
        segs = _spread_lanes(4)
        gt = scene_of(segs, edges=[(0, 1), (0, 2)]).graph
        adj = np.zeros((4, 4))
        adj[0, 1], adj[0, 3], adj[0, 2] = 0.9, 0.8, 0.7
        pred = LaneGraph(gt.segments, adj)
        match = Assignment(pairs=tuple((i, i) for i in range(4)),
                           unmatched_preds=(), unmatched_gts=(), total_cost=0.0)
        assert top_metric(pred, gt, match) == pytest.approx(5.0 / 6.0, abs=1e-12)

    def test_unmatched_gt_vertex_counts_zero(self):
        segs = _spread_lanes(2)
        gt = scene_of(segs, edges=[(0, 1)]).graph
        match = Assignment(pairs=(), unmatched_preds=(0, 1),
                           unmatched_gts=(0, 1), total_cost=0.0)
        assert top_metric(gt, gt, match) == 0.0

    def test_edge_threshold_filters(self):
        segs = _spread_lanes(2)
        gt = scene_of(segs, edges=[(0, 1)]).graph
        adj = np.zeros((2, 2))
        adj[0, 1] = 0.01  # below default threshold
        pred = LaneGraph(gt.segments, adj)
        match = Assignment(pairs=((0, 0), (1, 1)), unmatched_preds=(),
                           unmatched_gts=(), total_cost=0.0)
        assert top_metric(pred, gt, match) == 0.0
        assert top_metric(pred, gt, match, edge_threshold=0.001) == 1.0


def _mixed_corpus(count=6, seed=0):
    return [scenegen.generate(scenegen.PRESETS[i % 5], seed + i) for i in range(count)]


class TestEvaluateLaneseg:
    def test_gt_equals_gt(self):
        gt = _mixed_corpus()
        rep = evaluate_laneseg(gt, gt)
        for key, want in (("mAP", 1.0), ("AP_ls", 1.0), ("AP_ped", 1.0),
                          ("TOP_lsls", 1.0), ("AE_dist", 0.0), ("AE_type", 0.0)):
            assert rep.metrics[key] == pytest.approx(want, abs=1e-9), key

    def test_empty_predictions(self):
        gt = _mixed_corpus(3)
        empty = [scenegen.perturb(s, scenegen.PerturbSpec(p_drop=1.0)) for s in gt]
        rep = evaluate_laneseg(gt, empty)
        assert rep.metrics["mAP"] == 0.0
        assert rep.metrics["TOP_lsls"] == 0.0

    def test_noise_monotonicity(self):
        gt = _mixed_corpus(10)
        maps = []
        for sigma in (0.1, 2.0):
            pred = [scenegen.perturb(s, scenegen.PerturbSpec(sigma_pos=sigma, seed=2))
                    for s in gt]
            maps.append(evaluate_laneseg(gt, pred).metrics["mAP"])
        assert maps[0] > maps[1]

    def test_type_flips_raise_ae_type(self):
        gt = _mixed_corpus(4)
        pred = [scenegen.perturb(s, scenegen.PerturbSpec(p_type_flip=0.8, seed=3))
                for s in gt]
        rep = evaluate_laneseg(gt, pred)
        assert rep.metrics["AE_type"] > 0.0
        assert rep.metrics["AE_dist"] == pytest.approx(0.0, abs=1e-12)

    def test_frame_mismatch_raises(self):
        gt = _mixed_corpus(2)
        with pytest.raises(ValueError):
            evaluate_laneseg(gt, gt[:1])

    def test_deterministic(self):
        gt = _mixed_corpus(4)
        pred = [scenegen.perturb(s, scenegen.PerturbSpec(sigma_pos=0.5, seed=4))
                for s in gt]
        a = evaluate_laneseg(gt, pred).metrics
        b = evaluate_laneseg(gt, pred).metrics
        assert a == b


class TestEvaluateMapele:
    def test_decomposed_gt_equals_gt(self):
        gt = _mixed_corpus(5)
        frames = [decompose_to_map_elements(s.graph) for s in gt]
        rep = evaluate_mapele(frames, frames)
        assert rep.metrics["mAP"] == pytest.approx(1.0, abs=1e-9)

    def test_scene_inputs_accepted(self):
        gt = _mixed_corpus(5)
        rep = evaluate_mapele(gt, gt)
        assert rep.metrics["mAP"] == pytest.approx(1.0, abs=1e-9)

    def test_only_dividers_predicted(self):
        gt = _mixed_corpus(5)
        frames = [decompose_to_map_elements(s.graph) for s in gt]
        from lanesegkit.preprocess import MapElementClass

        div_only = [[e for e in f if e.cls is MapElementClass.DIVIDER] for f in frames]
        rep = evaluate_mapele(frames, div_only)
        assert rep.metrics["AP_ped"] == 0.0
        assert rep.metrics["mAP"] == pytest.approx(rep.metrics["AP_div"] / 2)

    def test_threshold_monotonicity(self):
        gt = _mixed_corpus(6)
        pred = [scenegen.perturb(s, scenegen.PerturbSpec(sigma_pos=0.3, seed=5))
                for s in gt]
        rep = evaluate_mapele(gt, pred)
        by_t = rep.ap_breakdown["AP_div"]
        assert by_t["0.5"] <= by_t["1"] <= by_t["1.5"]


class TestEvaluateCenterline:
    def test_gt_equals_gt(self):
        gt = _mixed_corpus(5)
        rep = evaluate_centerline(gt, gt)
        assert rep.metrics["DET_l"] == pytest.approx(1.0, abs=1e-9)
        assert rep.metrics["TOP_ll"] == pytest.approx(1.0, abs=1e-9)
        assert rep.metrics["OLS"] == pytest.approx(1.0, abs=1e-9)

    def test_extraction_is_idempotent_input(self):
        gt = _mixed_corpus(3)
        reduced = [Scene(s.frame_id, extract_centerlines(s.graph), s.x_range, s.y_range)
                   for s in gt]
        rep = evaluate_centerline(gt, reduced)
        assert rep.metrics["DET_l"] == pytest.approx(1.0, abs=1e-9)

    def test_dropped_edges_halve_ols(self):
        gt = _mixed_corpus(4)
        no_edges = []
        for s in gt:
            g = s.graph
            no_edges.append(Scene(
                s.frame_id,
                LaneGraph(g.segments, np.zeros_like(g.adjacency)),
                s.x_range, s.y_range,
            ))
        rep = evaluate_centerline(gt, no_edges)
        assert rep.metrics["TOP_ll"] == 0.0
        assert rep.metrics["OLS"] == pytest.approx(rep.metrics["DET_l"] / 2)
