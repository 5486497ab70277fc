"""Benchmark metrics for the three tasks: lane-segment perception,
map-element detection, and centerline perception.

Average precision ranks predictions dataset-wide by confidence, matches
greedily per frame against the nearest unmatched ground truth under a
distance threshold, and integrates the exact precision-recall curve.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import LaneClass, LaneGraph, LaneSegment, Scene
from .geometry import chamfer, frechet_discrete
from .preprocess import MapElementClass, decompose_to_map_elements, extract_centerlines

LANESEG_THRESHOLDS = (1.0, 2.0, 3.0)
CHAMFER_THRESHOLDS = (0.5, 1.0, 1.5)
FRECHET_THRESHOLDS = (1.0, 2.0, 3.0)
TOP_EDGE_THRESHOLD = 0.05


@dataclass(frozen=True)
class EvalReport:
    """All metrics of one evaluation run.

    AP / TOP / OLS values live in [0, 1] here and are scaled by 100 at the
    CLI; AE_dist is meters and AE_type already a percentage.
    """

    task: str
    frames: int
    metrics: dict[str, float]
    ap_breakdown: dict[str, dict[str, float]] = field(default_factory=dict)


def d_ls(pred: LaneSegment, gt: LaneSegment) -> float:
    """Lane-segment distance: mean of the boundary-point-set Chamfer
    distance and the centerline discrete Frechet distance."""
    if pred.cls is not LaneClass.LANE_SEGMENT or gt.cls is not LaneClass.LANE_SEGMENT:
        raise ValueError("d_ls is defined for lane-class segments only")
    return 0.5 * (
        chamfer(pred.boundary_points(), gt.boundary_points())
        + frechet_discrete(pred.centerline, gt.centerline)
    )


def chamfer_segments(pred: LaneSegment, gt: LaneSegment) -> float:
    """Chamfer distance between two segments' boundary point sets."""
    return chamfer(pred.boundary_points(), gt.boundary_points())


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("LANESEGKIT_THREADS", "1")))
    except ValueError:
        return 1


def _map_frames(fn, items):
    """Apply fn per frame, optionally on a thread pool; order preserved."""
    workers = min(_thread_count(), max(1, len(items)))
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _distance_matrices(pred_frames, gt_frames, distance_fn):
    def one(pair):
        preds, gts = pair
        m = np.zeros((len(preds), len(gts)))
        for i, p in enumerate(preds):
            for j, g in enumerate(gts):
                m[i, j] = distance_fn(p, g)
        return m

    return _map_frames(one, list(zip(pred_frames, gt_frames)))


def _rank_order(preds) -> list[int]:
    return sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, preds[i].id))


def _greedy_match(preds, gts, dmat, threshold):
    """Match predictions in confidence order to the nearest unmatched GT
    strictly inside the threshold. Returns (tp flags, {pred_i: gt_j})."""
    tp = np.zeros(len(preds), dtype=bool)
    pair_of_pred: dict[int, int] = {}
    if not gts:
        return tp, pair_of_pred
    free = np.ones(len(gts), dtype=bool)
    for i in _rank_order(preds):
        if not free.any():
            break
        cand = np.where(free, dmat[i], np.inf)
        j = int(np.argmin(cand))
        if cand[j] < threshold:
            tp[i] = True
            free[j] = False
            pair_of_pred[i] = j
    return tp, pair_of_pred


def _pooled_ap(per_frame, total_gt) -> float:
    """Exact-area AP from per-frame (preds, tp) pairs.

    per_frame: list of (pred list, tp flags). Records pool dataset-wide,
    sort by (confidence desc, id, frame index), and the precision envelope
    is made monotone before integrating against recall.
    """
    if total_gt == 0:
        return 0.0
    records = []
    for f, (preds, tp) in enumerate(per_frame):
        for i, p in enumerate(preds):
            records.append((-p.confidence, p.id, f, bool(tp[i])))
    if not records:
        return 0.0
    records.sort()
    tps = np.array([r[3] for r in records], dtype=np.float64)
    tp_cum = np.cumsum(tps)
    fp_cum = np.cumsum(1.0 - tps)
    recall = tp_cum / total_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1e-12)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def _ap_at(pred_frames, gt_frames, dmats, threshold) -> float:
    per_frame = []
    for preds, gts, dm in zip(pred_frames, gt_frames, dmats):
        tp, _ = _greedy_match(preds, gts, dm, threshold)
        per_frame.append((preds, tp))
    total_gt = sum(len(g) for g in gt_frames)
    return _pooled_ap(per_frame, total_gt)


def average_precision(pred_frames, gt_frames, distance_fn, threshold: float) -> float:
    """AP in [0, 1] at one matching threshold over aligned frame lists.

    A dataset with zero ground truths scores 0 by definition.
    """
    if len(pred_frames) != len(gt_frames):
        raise ValueError("prediction and GT frame counts differ")
    dmats = _distance_matrices(pred_frames, gt_frames, distance_fn)
    return _ap_at(pred_frames, gt_frames, dmats, threshold)


def _top_accumulate(pred_adj, gt_adj, pred_of_gt, edge_threshold):
    """Sum and count of per-vertex neighbor precisions for the TOP score.

    Vertices with no GT successors are skipped; a counted vertex whose
    match is missing contributes 0. For a matched vertex, predicted
    successors at or above the edge threshold are ranked by score and
    each true successor adds precision-at-its-hit; the sum is normalized
    by the GT successor count.
    """
    gt_adj = np.asarray(gt_adj)
    pred_adj = np.asarray(pred_adj)
    gt_of_pred = {p: g for g, p in pred_of_gt.items()}
    total = 0.0
    count = 0
    for v in range(gt_adj.shape[0]):
        succ = {w for w in range(gt_adj.shape[1]) if gt_adj[v, w] > 0.5}
        if not succ:
            continue
        count += 1
        p = pred_of_gt.get(v)
        if p is None:
            continue
        neigh = [
            (u, float(pred_adj[p, u]))
            for u in range(pred_adj.shape[1])
            if u != p and pred_adj[p, u] >= edge_threshold
        ]
        neigh.sort(key=lambda t: (-t[1], t[0]))
        hits = 0
        acc = 0.0
        for rank, (u, _) in enumerate(neigh, start=1):
            w = gt_of_pred.get(u)
            if w is not None and w in succ:
                hits += 1
                acc += hits / rank
        total += acc / len(succ)
    return total, count


def top_metric(pred_graph: LaneGraph, gt_graph: LaneGraph, vertex_match,
               edge_threshold: float = TOP_EDGE_THRESHOLD) -> float:
    """Topology score of one graph pair given a vertex assignment.

    vertex_match pairs are (pred index, gt index), produced at the loosest
    AP matching threshold. Averages per-vertex neighbor precision over GT
    vertices that have at least one successor; 0 when none do.
    """
    total, count = _top_accumulate(
        pred_graph.adjacency, gt_graph.adjacency, vertex_match.pred_of_gt(),
        edge_threshold,
    )
    return total / count if count else 0.0


def _pair_scenes(gt_scenes, pred_scenes):
    gt_ids = sorted(s.frame_id for s in gt_scenes)
    pred_ids = sorted(s.frame_id for s in pred_scenes)
    if gt_ids != pred_ids:
        raise ValueError("frame ids of GT and prediction corpora do not align")
    by_id = {s.frame_id: s for s in pred_scenes}
    gt_sorted = sorted(gt_scenes, key=lambda s: s.frame_id)
    return gt_sorted, [by_id[s.frame_id] for s in gt_sorted]


def _class_split(scene: Scene, cls: LaneClass):
    idx = [i for i, s in enumerate(scene.graph.segments) if s.cls is cls]
    return [scene.graph.segments[i] for i in idx], idx


def evaluate_laneseg(gt_scenes, pred_scenes,
                     edge_threshold: float = TOP_EDGE_THRESHOLD) -> EvalReport:
    """Lane-segment benchmark: AP_ls, AP_ped, mAP, TOP_lsls, AE_type, AE_dist.

    AP_ls averages over the lane-segment distance thresholds, AP_ped over
    the Chamfer thresholds; mAP is their mean. Topology and the two average
    errors reuse the greedy vertex match at the loosest (3 m) threshold.
    """
    gt_sorted, pred_sorted = _pair_scenes(gt_scenes, pred_scenes)

    lane_pred, lane_gt, lane_pred_idx, lane_gt_idx = [], [], [], []
    ped_pred, ped_gt = [], []
    for g, p in zip(gt_sorted, pred_sorted):
        pg, pgi = _class_split(p, LaneClass.LANE_SEGMENT)
        gg, ggi = _class_split(g, LaneClass.LANE_SEGMENT)
        lane_pred.append(pg)
        lane_gt.append(gg)
        lane_pred_idx.append(pgi)
        lane_gt_idx.append(ggi)
        ped_pred.append(_class_split(p, LaneClass.PED_CROSSING)[0])
        ped_gt.append(_class_split(g, LaneClass.PED_CROSSING)[0])

    lane_dmats = _distance_matrices(lane_pred, lane_gt, d_ls)
    ped_dmats = _distance_matrices(ped_pred, ped_gt, chamfer_segments)

    ap_ls_by_t = {t: _ap_at(lane_pred, lane_gt, lane_dmats, t) for t in LANESEG_THRESHOLDS}
    ap_ped_by_t = {t: _ap_at(ped_pred, ped_gt, ped_dmats, t) for t in CHAMFER_THRESHOLDS}
    ap_ls = float(np.mean(list(ap_ls_by_t.values())))
    ap_ped = float(np.mean(list(ap_ped_by_t.values())))

    loosest = max(LANESEG_THRESHOLDS)
    top_sum = 0.0
    top_count = 0
    tp_dists: list[float] = []
    tp_mismatch: list[bool] = []
    for f, (preds, gts, dm) in enumerate(zip(lane_pred, lane_gt, lane_dmats)):
        _, pair_of_pred = _greedy_match(preds, gts, dm, loosest)
        for i, j in pair_of_pred.items():
            tp_dists.append(float(dm[i, j]))
            tp_mismatch.append(
                preds[i].left_type is not gts[j].left_type
                or preds[i].right_type is not gts[j].right_type
            )
        gt_scene, pred_scene = gt_sorted[f], pred_sorted[f]
        gt_sub = gt_scene.graph.adjacency[np.ix_(lane_gt_idx[f], lane_gt_idx[f])]
        pred_sub = pred_scene.graph.adjacency[np.ix_(lane_pred_idx[f], lane_pred_idx[f])]
        pred_of_gt = {j: i for i, j in pair_of_pred.items()}
        s, c = _top_accumulate(pred_sub, gt_sub, pred_of_gt, edge_threshold)
        top_sum += s
        top_count += c

    top_lsls = top_sum / top_count if top_count else 0.0
    ae_dist = float(np.mean(tp_dists)) if tp_dists else 0.0
    ae_type = 100.0 * float(np.mean(tp_mismatch)) if tp_mismatch else 0.0

    return EvalReport(
        task="laneseg",
        frames=len(gt_sorted),
        metrics={
            "mAP": 0.5 * (ap_ls + ap_ped),
            "AP_ls": ap_ls,
            "AP_ped": ap_ped,
            "TOP_lsls": top_lsls,
            "AE_type": ae_type,
            "AE_dist": ae_dist,
        },
        ap_breakdown={
            "AP_ls": {f"{t:g}": v for t, v in ap_ls_by_t.items()},
            "AP_ped": {f"{t:g}": v for t, v in ap_ped_by_t.items()},
        },
    )


def _element_distance(a, b) -> float:
    return chamfer(a.points, b.points)


def _element_frames(scenes_or_frames):
    frames = []
    for item in scenes_or_frames:
        if isinstance(item, Scene):
            frames.append(decompose_to_map_elements(item.graph))
        else:
            frames.append(list(item))
    return frames


def evaluate_mapele(gt_frames, pred_frames) -> EvalReport:
    """Map-element benchmark over dividers and pedestrian crossings.

    Accepts per-frame MapElement lists, or Scenes which are decomposed
    first. AP per class averages the Chamfer thresholds; mAP is the class
    mean.
    """
    gts = _element_frames(gt_frames)
    preds = _element_frames(pred_frames)
    if len(gts) != len(preds):
        raise ValueError("prediction and GT frame counts differ")

    breakdown: dict[str, dict[str, float]] = {}
    per_class = {}
    for cls, name in ((MapElementClass.DIVIDER, "AP_div"),
                      (MapElementClass.PED_CROSSING, "AP_ped")):
        cg = [[e for e in f if e.cls is cls] for f in gts]
        cp = [[e for e in f if e.cls is cls] for f in preds]
        dmats = _distance_matrices(cp, cg, _element_distance)
        by_t = {t: _ap_at(cp, cg, dmats, t) for t in CHAMFER_THRESHOLDS}
        per_class[name] = float(np.mean(list(by_t.values())))
        breakdown[name] = {f"{t:g}": v for t, v in by_t.items()}

    return EvalReport(
        task="mapele",
        frames=len(gts),
        metrics={
            "mAP": 0.5 * (per_class["AP_div"] + per_class["AP_ped"]),
            "AP_div": per_class["AP_div"],
            "AP_ped": per_class["AP_ped"],
        },
        ap_breakdown=breakdown,
    )


def _centerline_distance(pred: LaneSegment, gt: LaneSegment) -> float:
    return frechet_discrete(pred.centerline, gt.centerline)


def evaluate_centerline(gt_scenes, pred_scenes,
                        edge_threshold: float = TOP_EDGE_THRESHOLD) -> EvalReport:
    """Centerline benchmark: DET_l over Frechet thresholds, TOP_ll on the
    successor graph, OLS = (DET_l + sqrt(TOP_ll)) / 2.

    Scenes are reduced to centerline-only graphs first (a no-op when they
    already are).
    """
    gt_sorted, pred_sorted = _pair_scenes(gt_scenes, pred_scenes)
    gt_cl = [Scene(s.frame_id, extract_centerlines(s.graph), s.x_range, s.y_range)
             for s in gt_sorted]
    pred_cl = [Scene(s.frame_id, extract_centerlines(s.graph), s.x_range, s.y_range)
               for s in pred_sorted]

    pred_segs = [list(s.graph.segments) for s in pred_cl]
    gt_segs = [list(s.graph.segments) for s in gt_cl]
    dmats = _distance_matrices(pred_segs, gt_segs, _centerline_distance)
    by_t = {t: _ap_at(pred_segs, gt_segs, dmats, t) for t in FRECHET_THRESHOLDS}
    det_l = float(np.mean(list(by_t.values())))

    loosest = max(FRECHET_THRESHOLDS)
    top_sum = 0.0
    top_count = 0
    for preds, gts, dm, gscene, pscene in zip(
        pred_segs, gt_segs, dmats, gt_cl, pred_cl
    ):
        _, pair_of_pred = _greedy_match(preds, gts, dm, loosest)
        pred_of_gt = {j: i for i, j in pair_of_pred.items()}
        s, c = _top_accumulate(
            pscene.graph.adjacency, gscene.graph.adjacency, pred_of_gt, edge_threshold
        )
        top_sum += s
        top_count += c
    top_ll = top_sum / top_count if top_count else 0.0

    return EvalReport(
        task="centerline",
        frames=len(gt_sorted),
        metrics={
            "OLS": 0.5 * (det_l + float(np.sqrt(top_ll))),
            "DET_l": det_l,
            "TOP_ll": top_ll,
        },
        ap_breakdown={"DET_l": {f"{t:g}": v for t, v in by_t.items()}},
    )
