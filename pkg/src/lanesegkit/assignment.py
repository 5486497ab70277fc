"""Bipartite matching between predictions and ground truth.

Exact Hungarian solver (shortest augmenting path with potentials) plus the
composite matching cost combining classification, line-type, geometric, and
mask terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LaneSegment
from .geometry import BinaryMask
from . import losses


@dataclass(frozen=True)
class Assignment:
    """A one-to-one matching: min(R, C) pairs of (pred index, gt index)."""

    pairs: tuple[tuple[int, int], ...]
    unmatched_preds: tuple[int, ...]
    unmatched_gts: tuple[int, ...]
    total_cost: float

    def pred_of_gt(self) -> dict[int, int]:
        return {g: p for p, g in self.pairs}

    def gt_of_pred(self) -> dict[int, int]:
        return {p: g for p, g in self.pairs}


@dataclass(frozen=True, eq=False)
class PredictedSegment:
    """Prediction-side bundle for matching: geometry plus score vectors.

    class_probs follows LaneClass order (lane segment, ped crossing);
    the two type distributions follow LineType order. mask_logits is an
    optional H x W array; without it the mask cost term is zero.
    """

    segment: LaneSegment
    class_probs: np.ndarray
    left_type_probs: np.ndarray
    right_type_probs: np.ndarray
    mask_logits: np.ndarray | None = None


def _solve_min_cost(a: np.ndarray) -> list[int]:
    """Shortest-augmenting-path assignment on an n x m matrix, n <= m.

    Returns col_of_row. Rows are inserted in increasing index and column
    scans run in increasing index, so ties resolve deterministically
    toward low indices.
    """
    n, m = a.shape
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    row_of_col = np.zeros(m + 1, dtype=np.int64)  # 0 = free, rows are 1-based
    way = np.zeros(m + 1, dtype=np.int64)

    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            delta = INF
            j1 = -1
            cur = a[i0 - 1, :] - u[i0] - v[1:]
            better = (~used[1:]) & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            free = np.flatnonzero(~used[1:]) + 1
            if free.size:
                k = free[np.argmin(minv[free])]
                delta = minv[k]
                j1 = int(k)
            u[row_of_col[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1

    col_of_row = [-1] * n
    for j in range(1, m + 1):
        if row_of_col[j] != 0:
            col_of_row[row_of_col[j] - 1] = j - 1
    return col_of_row


def hungarian(cost) -> Assignment:
    """Minimum-total-cost one-to-one assignment of min(R, C) pairs.

    Exact for arbitrary finite real matrices; verified against exhaustive
    permutation search in the test suite.
    """
    a = np.asarray(cost, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"cost matrix must be 2D and non-empty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("cost matrix has non-finite entries")

    rows, cols = a.shape
    if rows <= cols:
        col_of_row = _solve_min_cost(a)
        pairs = [(i, col_of_row[i]) for i in range(rows)]
    else:
        row_of_col = _solve_min_cost(a.T)
        pairs = sorted((row_of_col[j], j) for j in range(cols))

    total = float(np.sum([a[i, j] for i, j in pairs]))
    matched_p = {i for i, _ in pairs}
    matched_g = {j for _, j in pairs}
    return Assignment(
        pairs=tuple(pairs),
        unmatched_preds=tuple(i for i in range(rows) if i not in matched_p),
        unmatched_gts=tuple(j for j in range(cols) if j not in matched_g),
        total_cost=total,
    )


def focal_matching_cost(prob: float, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Classification cost on the GT-class probability.

    Detection-style focal matching cost: positive focal term minus negative
    term, shifted by the constant alpha * (-ln eps) so the result is
    nonnegative over the clamped probability range. Constant shifts do not
    change the argmin assignment.
    """
    eps = losses.PROB_EPS
    p = min(max(float(prob), eps), 1.0 - eps)
    pos = alpha * (1.0 - p) ** gamma * (-np.log(p))
    neg = alpha * p**gamma * (-np.log(1.0 - p))
    return float(pos - neg + alpha * (-np.log(eps)))


def matching_cost(
    pred: PredictedSegment,
    gt: LaneSegment,
    gt_mask: BinaryMask | None = None,
    weights: losses.LossWeights | None = None,
) -> float:
    """Composite pair cost: class + line type + vectorized L1 + mask terms.

    Reuses the training-loss lambda weights. The mask term contributes 0
    when the prediction carries no logits or the GT side no rasterized mask.
    """
    w = weights or losses.LossWeights()
    if pred.segment.num_points != gt.num_points:
        raise ValueError("prediction and GT point counts differ")

    cost = w.lam_cls * focal_matching_cost(float(pred.class_probs[gt.cls.index]))
    cost += w.lam_type * losses.ce_linetype(
        pred.left_type_probs, pred.right_type_probs, gt.left_type, gt.right_type
    )
    cost += w.lam_vec * losses.l1_vec(pred.segment, gt)
    if pred.mask_logits is not None and gt_mask is not None:
        cost += w.lam_seg * losses.mask_loss(
            pred.mask_logits, gt_mask.data, w.lam_ce, w.lam_dice
        )
    return float(cost)


def assign(preds, gts, cost_fn) -> Assignment:
    """Build the cost matrix with cost_fn(pred, gt) and solve it.

    Either side may be empty; the result is then all-unmatched with zero
    total cost.
    """
    preds, gts = list(preds), list(gts)
    if not preds or not gts:
        return Assignment(
            pairs=(),
            unmatched_preds=tuple(range(len(preds))),
            unmatched_gts=tuple(range(len(gts))),
            total_cost=0.0,
        )
    cost = np.array([[cost_fn(p, g) for g in gts] for p in preds], dtype=np.float64)
    return hungarian(cost)
