"""MLP prediction heads: centerline/offset regression, classifications,
mask embedding, and the topology branch. All heads carry exact backwards."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .core import LaneClass, LaneSegment, LineType, Polyline3, from_center_and_offset
from . import attention

LN_EPS = 1e-5
NUM_POINTS = 10


@dataclass(frozen=True, eq=False)
class MlpParams:
    """A three-layer MLP with ReLU; classification heads additionally apply
    (parameter-free) layer normalization before each hidden ReLU."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    layer_norm: bool = False

    def __post_init__(self):
        if (
            self.w1.shape[0] != self.b1.shape[0]
            or self.w2.shape[1] != self.w1.shape[0]
            or self.w2.shape[0] != self.b2.shape[0]
            or self.w3.shape[1] != self.w2.shape[0]
            or self.w3.shape[0] != self.b3.shape[0]
        ):
            raise ValueError("inconsistent MLP layer dimensions")

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w3.shape[0]

    @classmethod
    def create(cls, rng: np.random.Generator, in_dim: int, out_dim: int,
               hidden: int | None = None, layer_norm: bool = False,
               scale: float = 0.1) -> "MlpParams":
        h = hidden or in_dim
        return cls(
            w1=rng.normal(0, scale, (h, in_dim)),
            b1=np.zeros(h),
            w2=rng.normal(0, scale, (h, h)),
            b2=np.zeros(h),
            w3=rng.normal(0, scale, (out_dim, h)),
            b3=np.zeros(out_dim),
            layer_norm=layer_norm,
        )


@dataclass(eq=False)
class MlpGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray


def _layer_norm(z: np.ndarray):
    mu = z.mean()
    sig = np.sqrt(z.var() + LN_EPS)
    return (z - mu) / sig, sig


def _layer_norm_backward(y: np.ndarray, sig: float, d_y: np.ndarray) -> np.ndarray:
    return (d_y - d_y.mean() - y * (d_y * y).mean()) / sig


def _mlp_forward(params: MlpParams, x: np.ndarray):
    z1 = params.w1 @ x + params.b1
    u1, s1 = _layer_norm(z1) if params.layer_norm else (z1, 1.0)
    a1 = np.maximum(u1, 0.0)
    z2 = params.w2 @ a1 + params.b2
    u2, s2 = _layer_norm(z2) if params.layer_norm else (z2, 1.0)
    a2 = np.maximum(u2, 0.0)
    y = params.w3 @ a2 + params.b3
    return y, (x, u1, s1, a1, u2, s2, a2)


def mlp_apply(params: MlpParams, x) -> np.ndarray:
    """layer3(relu(layer2(relu(layer1(x))))), with optional LayerNorm
    before each ReLU."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.in_dim,):
        raise ValueError(f"input shape {x.shape} != ({params.in_dim},)")
    y, _ = _mlp_forward(params, x)
    return y


def mlp_backward(params: MlpParams, x, upstream) -> tuple[MlpGrads, np.ndarray]:
    """Exact grads of (upstream . mlp_apply(x)) w.r.t. params and input."""
    x = np.asarray(x, dtype=np.float64)
    d_y = np.asarray(upstream, dtype=np.float64)
    if x.shape != (params.in_dim,):
        raise ValueError(f"input shape {x.shape} != ({params.in_dim},)")
    if d_y.shape != (params.out_dim,):
        raise ValueError(f"upstream shape {d_y.shape} != ({params.out_dim},)")
    _, (x, u1, s1, a1, u2, s2, a2) = _mlp_forward(params, x)

    d_w3 = np.outer(d_y, a2)
    d_b3 = d_y
    d_a2 = params.w3.T @ d_y
    d_u2 = d_a2 * (u2 > 0)
    d_z2 = _layer_norm_backward(u2, s2, d_u2) if params.layer_norm else d_u2
    d_w2 = np.outer(d_z2, a1)
    d_b2 = d_z2
    d_a1 = params.w2.T @ d_z2
    d_u1 = d_a1 * (u1 > 0)
    d_z1 = _layer_norm_backward(u1, s1, d_u1) if params.layer_norm else d_u1
    d_w1 = np.outer(d_z1, x)
    d_b1 = d_z1
    d_x = params.w1.T @ d_z1
    return MlpGrads(d_w1, d_b1, d_w2, d_b2, d_w3, d_b3), d_x


@dataclass(frozen=True, eq=False)
class HeadParams:
    """All prediction branches hanging off one query."""

    centerline: MlpParams
    offset: MlpParams
    classification: MlpParams
    left_type: MlpParams
    right_type: MlpParams
    mask_embed: MlpParams
    topo_pre: MlpParams
    topo_suc: MlpParams
    topo_top: MlpParams

    @classmethod
    def create(cls, rng: np.random.Generator, channels: int,
               num_points: int = NUM_POINTS, scale: float = 0.1) -> "HeadParams":
        reg = dict(hidden=channels, layer_norm=False, scale=scale)
        clf = dict(hidden=channels, layer_norm=True, scale=scale)
        return cls(
            centerline=MlpParams.create(rng, channels, num_points * 3, **reg),
            offset=MlpParams.create(rng, channels, num_points * 3, **reg),
            classification=MlpParams.create(rng, channels, 2, **clf),
            left_type=MlpParams.create(rng, channels, 3, **clf),
            right_type=MlpParams.create(rng, channels, 3, **clf),
            mask_embed=MlpParams.create(rng, channels, channels, **reg),
            topo_pre=MlpParams.create(rng, channels, channels, **reg),
            topo_suc=MlpParams.create(rng, channels, channels, **reg),
            topo_top=MlpParams.create(rng, 2 * channels, 1, **reg),
        )


@dataclass(frozen=True, eq=False)
class Prediction:
    """Raw head outputs for one query, probabilities already squashed."""

    centerline: np.ndarray
    offset: np.ndarray
    class_probs: np.ndarray
    left_type_probs: np.ndarray
    right_type_probs: np.ndarray

    def to_segment(self, seg_id: int = 0) -> LaneSegment:
        left, right = from_center_and_offset(self.centerline, self.offset)
        cls = LaneClass.LANE_SEGMENT if self.class_probs[0] >= self.class_probs[1] \
            else LaneClass.PED_CROSSING
        types = list(LineType)
        return LaneSegment(
            id=seg_id,
            centerline=Polyline3(self.centerline),
            left_boundary=left,
            right_boundary=right,
            left_type=types[int(np.argmax(self.left_type_probs))],
            right_type=types[int(np.argmax(self.right_type_probs))],
            cls=cls,
            confidence=float(self.class_probs.max()),
        )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def predict_heads(query, heads: HeadParams, num_points: int = NUM_POINTS) -> Prediction:
    """Run the regression and classification branches on one query."""
    q = np.asarray(query, dtype=np.float64)
    return Prediction(
        centerline=mlp_apply(heads.centerline, q).reshape(num_points, 3),
        offset=mlp_apply(heads.offset, q).reshape(num_points, 3),
        class_probs=_sigmoid(mlp_apply(heads.classification, q)),
        left_type_probs=_softmax(mlp_apply(heads.left_type, q)),
        right_type_probs=_softmax(mlp_apply(heads.right_type, q)),
    )


def geometry_heads_backward(query, heads: HeadParams, d_centerline, d_offset):
    """Backward of the two regression branches.

    Returns (centerline MlpGrads, offset MlpGrads, d_query) for upstream
    gradients on the (N, 3) centerline and offset outputs.
    """
    q = np.asarray(query, dtype=np.float64)
    gc, dq_c = mlp_backward(heads.centerline, q, np.asarray(d_centerline).ravel())
    go, dq_o = mlp_backward(heads.offset, q, np.asarray(d_offset).ravel())
    return gc, go, dq_c + dq_o


def mask_from_embedding(query, mask_mlp: MlpParams, grid: attention.BevGrid) -> np.ndarray:
    """Instance mask probabilities: sigmoid of the dot product between the
    query's mask embedding and every BEV cell feature."""
    q = np.asarray(query, dtype=np.float64)
    embed = mlp_apply(mask_mlp, q)
    if embed.shape[0] != grid.c:
        raise ValueError(f"mask embedding dim {embed.shape[0]} != grid channels {grid.c}")
    return _sigmoid(grid.data @ embed)


def mask_from_embedding_backward(query, mask_mlp: MlpParams, grid: attention.BevGrid,
                                 upstream):
    """Grads of (upstream . mask probabilities) w.r.t. MLP params and query."""
    q = np.asarray(query, dtype=np.float64)
    embed = mlp_apply(mask_mlp, q)
    s = _sigmoid(grid.data @ embed)
    d_logits = np.asarray(upstream, dtype=np.float64) * s * (1.0 - s)
    d_embed = np.einsum("hw,hwc->c", d_logits, grid.data)
    return mlp_backward(mask_mlp, q, d_embed)


def topology_scores(queries, pre: MlpParams, suc: MlpParams, top: MlpParams) -> np.ndarray:
    """Weighted adjacency over queries.

    A[i, j] = sigmoid(MLP_top(concat(MLP_pre(q_i), MLP_suc(q_j)))); the
    predecessor and successor projections do not share parameters and the
    diagonal is forced to zero.
    """
    qs = np.asarray(queries, dtype=np.float64)
    if qs.ndim != 2 or qs.shape[0] < 1:
        raise ValueError("need at least one query")
    n = qs.shape[0]
    pre_feats = np.stack([mlp_apply(pre, q) for q in qs])
    suc_feats = np.stack([mlp_apply(suc, q) for q in qs])
    scores = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            t = mlp_apply(top, np.concatenate([pre_feats[i], suc_feats[j]]))
            scores[i, j] = _sigmoid(t)[0]
    return scores


def topology_scores_backward(queries, pre: MlpParams, suc: MlpParams, top: MlpParams,
                             upstream):
    """Grads of (upstream . topology_scores) w.r.t. the three MLPs and the
    queries. Diagonal upstream entries are ignored (the output there is a
    hard zero)."""
    qs = np.asarray(queries, dtype=np.float64)
    d_a = np.asarray(upstream, dtype=np.float64)
    n = qs.shape[0]
    pre_feats = np.stack([mlp_apply(pre, q) for q in qs])
    suc_feats = np.stack([mlp_apply(suc, q) for q in qs])
    d_pre_feats = np.zeros_like(pre_feats)
    d_suc_feats = np.zeros_like(suc_feats)
    g_top = None
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            cat = np.concatenate([pre_feats[i], suc_feats[j]])
            t = mlp_apply(top, cat)
            a = _sigmoid(t)[0]
            d_t = np.array([d_a[i, j] * a * (1.0 - a)])
            g, d_cat = mlp_backward(top, cat, d_t)
            g_top = g if g_top is None else _acc(g_top, g)
            half = pre_feats.shape[1]
            d_pre_feats[i] += d_cat[:half]
            d_suc_feats[j] += d_cat[half:]

    d_queries = np.zeros_like(qs)
    g_pre = g_suc = None
    for i, q in enumerate(qs):
        g, dq = mlp_backward(pre, q, d_pre_feats[i])
        g_pre = g if g_pre is None else _acc(g_pre, g)
        d_queries[i] += dq
        g, dq = mlp_backward(suc, q, d_suc_feats[i])
        g_suc = g if g_suc is None else _acc(g_suc, g)
        d_queries[i] += dq
    return g_pre, g_suc, g_top, d_queries


def _acc(a: MlpGrads, b: MlpGrads) -> MlpGrads:
    return MlpGrads(*[getattr(a, f.name) + getattr(b, f.name) for f in fields(MlpGrads)])
