"""Training-loss terms and their weighted total.

All terms reduce by mean, are nonnegative, and vanish only at their
perfect-prediction fixed point (up to the probability clamp).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LaneSegment, LineType

PROB_EPS = 1e-7
DICE_EPS = 1.0


@dataclass(frozen=True)
class LossWeights:
    """Loss-term weights; defaults follow the training configuration."""

    lam_vec: float = 0.025
    lam_seg: float = 3.0
    lam_ce: float = 1.0
    lam_dice: float = 1.0
    lam_cls: float = 1.5
    lam_type: float = 0.01
    lam_top: float = 5.0

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")


@dataclass(frozen=True)
class LossParts:
    """Unweighted loss values feeding total_loss."""

    vec: float = 0.0
    ce: float = 0.0
    dice: float = 0.0
    cls: float = 0.0
    type: float = 0.0
    top: float = 0.0


def _clamp(p: np.ndarray | float) -> np.ndarray:
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def focal(prob: float, target: int, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Focal loss -alpha * (1 - p_t)^gamma * ln(p_t) on one sigmoid score.

    p_t is prob for target 1 and 1 - prob for target 0; prob is clamped to
    (0, 1) by PROB_EPS before evaluation.
    """
    if target not in (0, 1):
        raise ValueError(f"target must be 0 or 1, got {target}")
    p = _clamp(float(prob))
    p_t = p if target == 1 else 1.0 - p
    return float(-alpha * (1.0 - p_t) ** gamma * np.log(p_t))


def focal_array(probs: np.ndarray, targets: np.ndarray,
                alpha: float = 0.25, gamma: float = 2.0) -> np.ndarray:
    """Elementwise focal loss for arrays of scores and {0,1} targets."""
    p = _clamp(np.asarray(probs, dtype=np.float64))
    t = np.asarray(targets, dtype=np.float64)
    p_t = np.where(t == 1.0, p, 1.0 - p)
    return -alpha * (1.0 - p_t) ** gamma * np.log(p_t)


def l1_vec(pred, gt) -> float:
    """Mean absolute coordinate difference over all three lines.

    Accepts LaneSegment pairs or stacked (3, N, 3) line arrays ordered
    left, center, right.
    """
    a = pred.lines() if isinstance(pred, LaneSegment) else np.asarray(pred, dtype=np.float64)
    b = gt.lines() if isinstance(gt, LaneSegment) else np.asarray(gt, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"line shapes differ: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def mask_loss(logits, target, lam_ce: float = 1.0, lam_dice: float = 1.0) -> float:
    """lam_ce * mean BCE(sigmoid(logits), target) + lam_dice * dice term.

    Dice uses the epsilon-smoothed form 1 - (2*sum(p*t) + eps) / (sum(p)
    + sum(t) + eps) with eps = 1. BCE is evaluated from logits for
    stability.
    """
    x = np.asarray(logits, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if x.shape != t.shape:
        raise ValueError(f"logit shape {x.shape} != target shape {t.shape}")
    bce = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    p = 1.0 / (1.0 + np.exp(-x))
    dice = 1.0 - (2.0 * (p * t).sum() + DICE_EPS) / (p.sum() + t.sum() + DICE_EPS)
    return float(lam_ce * bce.mean() + lam_dice * dice)


def _cross_entropy(probs: np.ndarray, index: int) -> float:
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (3,):
        raise ValueError(f"expected a 3-way distribution, got shape {p.shape}")
    if abs(p.sum() - 1.0) > 1e-6 or p.min() < 0:
        raise ValueError(f"not a probability distribution: {p}")
    return float(-np.log(max(p[index], PROB_EPS)))


def ce_linetype(left_probs, right_probs, gt_left: LineType, gt_right: LineType) -> float:
    """Mean cross-entropy of the two boundary line-type classifications."""
    return 0.5 * (
        _cross_entropy(left_probs, gt_left.index)
        + _cross_entropy(right_probs, gt_right.index)
    )


def topology_loss(pred_scores, gt_adjacency, assignment,
                  alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Focal loss on predicted successor scores against projected GT edges.

    The GT adjacency is pulled through the assignment: a matched prediction
    pair (i, j) inherits gt[sigma_i, sigma_j]; any entry touching an
    unmatched prediction gets target 0. Mean over off-diagonal entries.
    """
    s = np.asarray(pred_scores, dtype=np.float64)
    g = np.asarray(gt_adjacency, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"pred scores must be square, got {s.shape}")
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"gt adjacency must be square, got {g.shape}")
    n = s.shape[0]
    if n <= 1:
        return 0.0
    gt_of_pred = assignment.gt_of_pred()
    target = np.zeros((n, n))
    for i, gi in gt_of_pred.items():
        for j, gj in gt_of_pred.items():
            target[i, j] = g[gi, gj]
    off = ~np.eye(n, dtype=bool)
    return float(focal_array(s[off], target[off], alpha, gamma).mean())


def total_loss(parts: LossParts, weights: LossWeights | None = None) -> float:
    """Weighted sum: lam_vec*vec + lam_seg*(lam_ce*ce + lam_dice*dice)
    + lam_cls*cls + lam_type*type + lam_top*top."""
    w = weights or LossWeights()
    vals = [parts.vec, parts.ce, parts.dice, parts.cls, parts.type, parts.top]
    if not all(np.isfinite(v) for v in vals):
        raise ValueError(f"non-finite loss part in {parts}")
    return float(
        w.lam_vec * parts.vec
        + w.lam_seg * (w.lam_ce * parts.ce + w.lam_dice * parts.dice)
        + w.lam_cls * parts.cls
        + w.lam_type * parts.type
        + w.lam_top * parts.top
    )
