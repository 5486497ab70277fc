"""Iterative refinement harness around the lane attention kernel.

Layer 1 places reference points by identical initialization from the
positional query; every later layer redistributes them along the previous
layer's predicted boundaries. Per layer the query is updated residually by
lane attention and a small feed-forward block, then the prediction heads
re-emit the segment. The fit demo drives the whole stack with plain
gradient descent on the weighted vectorized L1 loss.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from . import attention, losses, predictor
from .attention import AttentionParams, BevGrid
from .geometry import GridSpec
from .predictor import HeadParams, MlpGrads, Prediction


@dataclass(frozen=True, eq=False)
class FfnParams:
    """Two-layer feed-forward block with ReLU, applied residually."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def create(cls, rng: np.random.Generator, channels: int,
               hidden: int | None = None, scale: float = 0.1) -> "FfnParams":
        h = hidden or 2 * channels
        return cls(
            w1=rng.normal(0, scale, (h, channels)),
            b1=np.zeros(h),
            w2=rng.normal(0, scale, (channels, h)),
            b2=np.zeros(channels),
        )


@dataclass(frozen=True, eq=False)
class LayerParams:
    attn: AttentionParams
    ffn: FfnParams


@dataclass(frozen=True, eq=False)
class RefineParams:
    """One decoder stack: reference-point projection plus L layers."""

    ref_proj_w: np.ndarray
    ref_proj_b: np.ndarray
    layers: tuple[LayerParams, ...]

    @property
    def heads(self) -> int:
        return self.layers[0].attn.heads

    @classmethod
    def create(cls, rng: np.random.Generator, layer_count: int, heads: int,
               samples: int, channels: int, scale: float = 0.01) -> "RefineParams":
        layers = tuple(
            LayerParams(
                attn=attention.init_sampling_offsets(
                    AttentionParams.random(rng, heads, samples, channels, scale)
                ),
                ffn=FfnParams.create(rng, channels, scale=scale),
            )
            for _ in range(layer_count)
        )
        return cls(
            ref_proj_w=rng.normal(0, scale, (2, channels)),
            ref_proj_b=np.zeros(2),
            layers=layers,
        )


@dataclass(frozen=True, eq=False)
class LayerTrace:
    """Intermediates of one refinement layer."""

    refs: np.ndarray
    query: np.ndarray
    prediction: Prediction


@dataclass(frozen=True, eq=False)
class RefineResult:
    prediction: Prediction
    traces: tuple[LayerTrace, ...]


def _ffn_forward(p: FfnParams, q: np.ndarray):
    z = p.w1 @ q + p.b1
    a = np.maximum(z, 0.0)
    return q + p.w2 @ a + p.b2, (z, a)


def _ffn_backward(p: FfnParams, q: np.ndarray, cache, d_out: np.ndarray):
    z, a = cache
    d_w2 = np.outer(d_out, a)
    d_b2 = d_out
    d_a = p.w2.T @ d_out
    d_z = d_a * (z > 0)
    d_w1 = np.outer(d_z, q)
    d_b1 = d_z
    d_q = d_out + p.w1.T @ d_z
    return (d_w1, d_b1, d_w2, d_b2), d_q


def refine_iterate(query, grid: BevGrid, params: RefineParams,
                   heads: HeadParams) -> RefineResult:
    """Run all layers; the initial query doubles as the positional query
    feeding the identical reference-point initialization."""
    q = np.asarray(query, dtype=np.float64)
    refs = attention.identical_init(q, params.ref_proj_w, params.ref_proj_b, params.heads)
    traces = []
    for layer in params.layers:
        q = q + attention.lane_attn_forward(q, refs, grid, layer.attn)
        q, _ = _ffn_forward(layer.ffn, q)
        pred = predictor.predict_heads(q, heads)
        traces.append(LayerTrace(refs=refs, query=q, prediction=pred))
        refs = attention.distribute_reference_points(
            pred.to_segment(), params.heads, grid.spec
        )
    return RefineResult(prediction=traces[-1].prediction, traces=tuple(traces))


@dataclass(eq=False)
class FitResult:
    initial_loss: float
    final_loss: float
    steps: int
    converged: bool
    loss_history: list[float]


def _target_segment(rng: np.random.Generator) -> np.ndarray:
    """Miniature target lines (3, N, 3), ordered left/center/right.

    The optimizer moves each output coordinate by at most
    lr * lam_vec * 3 / 90 per step, so the target lives in a
    millimeter-scale box that the 2000-step budget can traverse.
    """
    n = predictor.NUM_POINTS
    x = np.linspace(-2e-3, 2e-3, n)
    y = np.full(n, 1e-3 * rng.choice([-1.0, 1.0]))
    z = np.full(n, 5e-4 * rng.choice([-1.0, 1.0]))
    center = np.stack([x, y, z], axis=1)
    offset = np.tile(np.array([0.0, 8e-4, 2e-4]), (n, 1))
    return np.stack([center + offset, center, center - offset])


def _l1_vec_grad(pred_lines: np.ndarray, target_lines: np.ndarray):
    diff = pred_lines - target_lines
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def _sgd_attn(p: AttentionParams, g: attention.Gradients, lr: float) -> AttentionParams:
    return AttentionParams(
        value_proj=p.value_proj - lr * g.d_value_proj,
        output_proj=p.output_proj - lr * g.d_output_proj,
        offset_w=p.offset_w - lr * g.d_offset_w,
        offset_b=p.offset_b - lr * g.d_offset_b,
        attn_w=p.attn_w - lr * g.d_attn_w,
        attn_b=p.attn_b - lr * g.d_attn_b,
    )


def _sgd_mlp(p: predictor.MlpParams, g: MlpGrads, lr: float) -> predictor.MlpParams:
    return replace(p, **{f.name: getattr(p, f.name) - lr * getattr(g, f.name)
                         for f in fields(MlpGrads)})


def fit_demo(seed: int = 0, steps: int = 2000, lr: float = 1e-2,
             layer_count: int = 3, weights: losses.LossWeights | None = None) -> FitResult:
    """Fit one synthetic target with the full L-layer stack.

    Optimizes lam_vec * l1_vec by plain gradient descent on all attention,
    feed-forward, and geometry-head parameters; reference points are
    treated as constants per layer, so no gradient crosses the
    redistribution step.
    """
    w = weights or losses.LossWeights()
    rng = np.random.default_rng(seed)
    channels, heads_m, samples_k = 16, 2, 4
    spec = GridSpec(h=12, w=10, x_range=(-6.0, 6.0), y_range=(-5.0, 5.0))
    grid = BevGrid(rng.normal(0.0, 0.01, (spec.h, spec.w, channels)), spec)
    params = RefineParams.create(rng, layer_count, heads_m, samples_k, channels)
    heads = HeadParams.create(rng, channels, scale=0.01)
    query = rng.normal(0.0, 1.0, channels)
    target = _target_segment(rng)

    def forward_backward(cur_params: RefineParams, cur_heads: HeadParams):
        q = query
        refs = attention.identical_init(
            q, cur_params.ref_proj_w, cur_params.ref_proj_b, cur_params.heads
        )
        layer_cache = []
        for layer in cur_params.layers:
            q_in = q
            q1 = q_in + attention.lane_attn_forward(q_in, refs, grid, layer.attn)
            q2, ffn_cache = _ffn_forward(layer.ffn, q1)
            pred = predictor.predict_heads(q2, cur_heads)
            layer_cache.append((q_in, refs, q1, ffn_cache, q2))
            refs = attention.distribute_reference_points(
                pred.to_segment(), cur_params.heads, grid.spec
            )
            q = q2

        final_pred = predictor.predict_heads(q, cur_heads)
        pred_lines = np.stack([
            final_pred.centerline + final_pred.offset,
            final_pred.centerline,
            final_pred.centerline - final_pred.offset,
        ])
        l1, d_lines = _l1_vec_grad(pred_lines, target)
        loss = w.lam_vec * l1
        d_lines = w.lam_vec * d_lines
        d_center = d_lines[0] + d_lines[1] + d_lines[2]
        d_offset = d_lines[0] - d_lines[2]

        g_center, g_offset, d_q = predictor.geometry_heads_backward(
            q, cur_heads, d_center, d_offset
        )
        layer_grads = []
        for (q_in, layer_refs, q1, ffn_cache, _), layer in zip(
            reversed(layer_cache), reversed(cur_params.layers)
        ):
            ffn_g, d_q1 = _ffn_backward(layer.ffn, q1, ffn_cache, d_q)
            attn_g = attention.lane_attn_backward(q_in, layer_refs, grid, layer.attn, d_q1)
            layer_grads.append((attn_g, ffn_g))
            d_q = d_q1 + attn_g.d_query
        layer_grads.reverse()
        return loss, layer_grads, g_center, g_offset

    initial_loss = None
    history = []
    loss = float("inf")
    for step in range(steps):
        loss, layer_grads, g_center, g_offset = forward_backward(params, heads)
        if initial_loss is None:
            initial_loss = loss
        if step % 100 == 0:
            history.append(loss)

        new_layers = []
        for layer, (attn_g, ffn_g) in zip(params.layers, layer_grads):
            fw1, fb1, fw2, fb2 = ffn_g
            ffn_new = FfnParams(
                layer.ffn.w1 - lr * fw1, layer.ffn.b1 - lr * fb1,
                layer.ffn.w2 - lr * fw2, layer.ffn.b2 - lr * fb2,
            )
            new_layers.append(LayerParams(attn=_sgd_attn(layer.attn, attn_g, lr), ffn=ffn_new))
        params = replace(params, layers=tuple(new_layers))
        heads = replace(
            heads,
            centerline=_sgd_mlp(heads.centerline, g_center, lr),
            offset=_sgd_mlp(heads.offset, g_offset, lr),
        )

    final_loss, _, _, _ = forward_backward(params, heads)
    history.append(final_loss)
    return FitResult(
        initial_loss=float(initial_loss),
        final_loss=float(final_loss),
        steps=steps,
        converged=final_loss < 0.1 * initial_loss,
        loss_history=history,
    )
