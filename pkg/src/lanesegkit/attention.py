"""Desk-scale lane attention kernel.

The operator samples a BEV feature field at M*K locations (one reference
point per head, K learnable offsets each), softmax-weights the K samples
within each head, and mixes heads back into the query channel space:

    out = sum_m W_m [ sum_k a_{m,k} * W'_m * Bilinear(B, p_m + dp_{m,k}) ]

Offsets and attention logits are linear projections of the query; the
softmax normalizes over the K locations of each head. Everything runs in
64-bit with exact analytic gradients, verified against central finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import LaneSegment
from .geometry import GridSpec, point_along

DEFAULT_HEADS = 8
DEFAULT_SAMPLES = 32


@dataclass(frozen=True, eq=False)
class BevGrid:
    """H x W x C feature field over a metric BEV rectangle."""

    data: np.ndarray
    spec: GridSpec

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 3:
            raise ValueError(f"grid data must be (H, W, C), got {a.shape}")
        if a.shape[:2] != (self.spec.h, self.spec.w):
            raise ValueError(
                f"grid data {a.shape[:2]} does not match spec {(self.spec.h, self.spec.w)}"
            )
        if not np.all(np.isfinite(a)):
            raise ValueError("grid data has non-finite values")
        object.__setattr__(self, "data", a)

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def c(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class AttentionParams:
    """Learnable weights of one lane attention layer.

    value_proj (M, C_v, C) and output_proj (M, C, C_v) split and re-merge
    the channel space per head (C_v = C / M). offset_w/b project the query
    to M*K*2 sampling offsets in grid-cell units; attn_w/b to M*K logits.
    """

    value_proj: np.ndarray
    output_proj: np.ndarray
    offset_w: np.ndarray
    offset_b: np.ndarray
    attn_w: np.ndarray
    attn_b: np.ndarray

    def __post_init__(self):
        m, c_v, c = self.value_proj.shape
        if c % m != 0 or c_v != c // m:
            raise ValueError(f"channels {c} not divisible into {m} heads of {c_v}")
        if self.output_proj.shape != (m, c, c_v):
            raise ValueError("output_proj shape mismatch")
        k = self.attn_w.shape[0] // m
        if self.attn_w.shape != (m * k, c) or self.attn_b.shape != (m * k,):
            raise ValueError("attention projection shape mismatch")
        if self.offset_w.shape != (m * k * 2, c) or self.offset_b.shape != (m * k * 2,):
            raise ValueError("offset projection shape mismatch")

    @property
    def heads(self) -> int:
        return self.value_proj.shape[0]

    @property
    def samples(self) -> int:
        return self.attn_w.shape[0] // self.heads

    @property
    def channels(self) -> int:
        return self.value_proj.shape[2]

    @classmethod
    def random(cls, rng: np.random.Generator, heads: int, samples: int,
               channels: int, scale: float = 0.1) -> "AttentionParams":
        c_v = channels // heads
        return cls(
            value_proj=rng.normal(0, scale, (heads, c_v, channels)),
            output_proj=rng.normal(0, scale, (heads, channels, c_v)),
            offset_w=rng.normal(0, scale, (heads * samples * 2, channels)),
            offset_b=rng.normal(0, 1.0, (heads * samples * 2,)),
            attn_w=rng.normal(0, scale, (heads * samples, channels)),
            attn_b=rng.normal(0, scale, (heads * samples,)),
        )


@dataclass(frozen=True, eq=False)
class Gradients:
    """Partials of (upstream . output) w.r.t. every input and parameter."""

    d_query: np.ndarray
    d_grid: np.ndarray
    d_value_proj: np.ndarray
    d_output_proj: np.ndarray
    d_offset_w: np.ndarray
    d_offset_b: np.ndarray
    d_attn_w: np.ndarray
    d_attn_b: np.ndarray


def bilinear(grid: BevGrid, p) -> np.ndarray:
    """Bilinear sample of the field at one normalized point, zero padded.

    Normalized (0, 0) is the low-x/low-y corner of the rectangle; cell
    centers sit at ((h + 0.5) / H, (w + 0.5) / W).
    """
    p = np.asarray(p, dtype=np.float64)
    gh = p[0] * grid.h - 0.5
    gw = p[1] * grid.w - 0.5
    return _bilinear_values(grid.data, np.array([gh]), np.array([gw]))[0]


def _corner_layout(h: int, w: int, gh: np.ndarray, gw: np.ndarray):
    """Corner indices, weights, and validity for zero-padded bilinear reads.

    Returns (idx, wts, valid), each (4, N); invalid corners point at cell 0
    and must be masked by the caller via the valid flags.
    """
    hf = np.floor(gh)
    wf = np.floor(gw)
    h0 = hf.astype(np.int64)
    w0 = wf.astype(np.int64)
    fh = gh - hf
    fw = gw - wf
    n = gh.size
    hh = np.empty((4, n), np.int64)
    ww = np.empty((4, n), np.int64)
    hh[0] = h0; hh[1] = h0; hh[2] = h0 + 1; hh[3] = h0 + 1
    ww[0] = w0; ww[1] = w0 + 1; ww[2] = w0; ww[3] = w0 + 1
    wts = np.empty((4, n))
    wts[0] = (1 - fh) * (1 - fw)
    wts[1] = (1 - fh) * fw
    wts[2] = fh * (1 - fw)
    wts[3] = fh * fw
    valid = (hh >= 0) & (hh < h) & (ww >= 0) & (ww < w)
    idx = (hh * w + ww) * valid
    return idx, wts, valid


def _bilinear_values(data: np.ndarray, gh: np.ndarray, gw: np.ndarray) -> np.ndarray:
    """Vectorized zero-padded bilinear read at continuous grid coords."""
    h, w, c = data.shape
    idx, wts, valid = _corner_layout(h, w, gh, gw)
    vals = data.reshape(h * w, c).take(idx.reshape(-1), axis=0).reshape(4, gh.size, c)
    wv = wts * valid
    return (wv.T[:, None, :] @ vals.transpose(1, 0, 2))[:, 0, :]


def _bilinear_backward(data, gh, gw, d_out):
    """Backward of _bilinear_values: (d_data, d_gh, d_gw)."""
    h, w, _ = data.shape
    h0 = np.floor(gh).astype(np.int64)
    w0 = np.floor(gw).astype(np.int64)
    fh = gh - h0
    fw = gw - w0
    d_data = np.zeros_like(data)
    d_gh = np.zeros_like(gh)
    d_gw = np.zeros_like(gw)
    for dh, dw, wt, dwt_dfh, dwt_dfw in (
        (0, 0, (1 - fh) * (1 - fw), -(1 - fw), -(1 - fh)),
        (0, 1, (1 - fh) * fw, -fw, (1 - fh)),
        (1, 0, fh * (1 - fw), (1 - fw), -fh),
        (1, 1, fh * fw, fw, fh),
    ):
        hh, ww = h0 + dh, w0 + dw
        valid = (hh >= 0) & (hh < h) & (ww >= 0) & (ww < w)
        hc, wc = hh.clip(0, h - 1), ww.clip(0, w - 1)
        np.add.at(d_data, (hc, wc), np.where(valid[:, None], wt[:, None] * d_out, 0.0))
        corner = np.where(valid[:, None], data[hc, wc, :], 0.0)
        contrib = (corner * d_out).sum(axis=1)
        d_gh += dwt_dfh * contrib
        d_gw += dwt_dfw * contrib
    return d_data, d_gh, d_gw


def sample_positions(refs, offsets_cells, grid: BevGrid):
    """Continuous grid coordinates of every (head, sample) location."""
    refs = np.asarray(refs, dtype=np.float64)
    gh = refs[:, 0, None] * grid.h - 0.5 + offsets_cells[:, :, 0]
    gw = refs[:, 1, None] * grid.w - 0.5 + offsets_cells[:, :, 1]
    return gh, gw


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_shapes(query, refs, grid: BevGrid, params: AttentionParams):
    query = np.asarray(query, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    if query.shape != (params.channels,):
        raise ValueError(f"query shape {query.shape} != ({params.channels},)")
    if grid.c != params.channels:
        raise ValueError(f"grid channels {grid.c} != params channels {params.channels}")
    if refs.shape != (params.heads, 2):
        raise ValueError(f"reference points shape {refs.shape} != ({params.heads}, 2)")
    return query, refs


def _forward_parts(query, refs, grid, params):
    m, k = params.heads, params.samples
    offsets = (params.offset_w @ query + params.offset_b).reshape(m, k, 2)
    logits = (params.attn_w @ query + params.attn_b).reshape(m, k)
    attn = _softmax(logits)
    gh, gw = sample_positions(refs, offsets, grid)
    samples = _bilinear_values(grid.data, gh.ravel(), gw.ravel()).reshape(m, k, -1)
    values = samples @ params.value_proj.transpose(0, 2, 1)  # (m, k, c_v)
    heads = (attn[:, None, :] @ values)[:, 0, :]  # (m, c_v)
    out = (params.output_proj @ heads[:, :, None])[:, :, 0].sum(axis=0)
    return out, (offsets, logits, attn, gh, gw, samples, values, heads)


def lane_attn_forward(query, refs, grid: BevGrid, params: AttentionParams) -> np.ndarray:
    """One lane attention evaluation; returns a C-vector."""
    query, refs = _check_shapes(query, refs, grid, params)
    out, _ = _forward_parts(query, refs, grid, params)
    return out


def lane_attn_backward(query, refs, grid: BevGrid, params: AttentionParams,
                       upstream) -> Gradients:
    """Exact gradients of (upstream . output).

    Differentiates through the output/value projections, the per-head
    softmax, the bilinear sampling weights, and the offset projection.
    Reference points are constants within a layer, so no gradient is
    produced for them.
    """
    query, refs = _check_shapes(query, refs, grid, params)
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != query.shape:
        raise ValueError(f"upstream shape {g.shape} != query shape {query.shape}")
    m, k = params.heads, params.samples
    _, (offsets, logits, attn, gh, gw, samples, values, heads) = _forward_parts(
        query, refs, grid, params
    )

    d_output_proj = np.einsum("c,mv->mcv", g, heads)
    d_heads = np.einsum("mcv,c->mv", params.output_proj, g)
    d_attn = np.einsum("mv,mkv->mk", d_heads, values)
    d_values = attn[:, :, None] * d_heads[:, None, :]
    d_value_proj = np.einsum("mkv,mkc->mvc", d_values, samples)
    d_samples = np.einsum("mvc,mkv->mkc", params.value_proj, d_values)

    d_grid, d_gh, d_gw = _bilinear_backward(
        grid.data, gh.ravel(), gw.ravel(), d_samples.reshape(m * k, -1)
    )
    d_offsets = np.stack([d_gh.reshape(m, k), d_gw.reshape(m, k)], axis=-1)
    d_offset_flat = d_offsets.reshape(m * k * 2)

    d_logits = attn * (d_attn - (attn * d_attn).sum(axis=1, keepdims=True))
    d_logit_flat = d_logits.reshape(m * k)

    return Gradients(
        d_query=params.offset_w.T @ d_offset_flat + params.attn_w.T @ d_logit_flat,
        d_grid=d_grid,
        d_value_proj=d_value_proj,
        d_output_proj=d_output_proj,
        d_offset_w=np.outer(d_offset_flat, query),
        d_offset_b=d_offset_flat,
        d_attn_w=np.outer(d_logit_flat, query),
        d_attn_b=d_logit_flat,
    )


def canonical_offset_bias(heads: int, samples: int) -> np.ndarray:
    """Initial sampling offsets: rings of 8 directions at 45-degree steps,
    radii 1, 2, ... grid cells from inner to outer; a trailing partial ring
    keeps only its first directions. K = 32 gives 8 directions x radii
    {1, 2, 3, 4} per head."""
    per_head = np.zeros((samples, 2))
    for k in range(samples):
        ring = k // 8 + 1
        angle = (k % 8) * (np.pi / 4.0)
        per_head[k] = ring * np.array([np.cos(angle), np.sin(angle)])
    return np.tile(per_head, (heads, 1)).reshape(heads * samples * 2)


def init_sampling_offsets(params: AttentionParams) -> AttentionParams:
    """Return params with the canonical offset bias and zeroed offset
    weights, so the initial sampling pattern is query-independent."""
    return replace(
        params,
        offset_w=np.zeros_like(params.offset_w),
        offset_b=canonical_offset_bias(params.heads, params.samples),
    )


def distribute_reference_points(segment: LaneSegment, heads: int = DEFAULT_HEADS,
                                spec: GridSpec | None = None) -> np.ndarray:
    """Heads-to-regions placement from a predicted segment.

    The first half of the heads take arc-length parameters (2i + 1) / M
    along the left boundary, the second half the same parameters along the
    right boundary; M = 8 yields four points per boundary at 1/8, 3/8, 5/8,
    7/8. Returned in normalized grid coordinates.
    """
    if heads % 2 != 0:
        raise ValueError("head count must be even")
    spec = spec or GridSpec()
    params_t = [(2 * i + 1) / heads for i in range(heads // 2)]
    refs = np.zeros((heads, 2))
    for side, boundary in enumerate((segment.left_boundary, segment.right_boundary)):
        for i, t in enumerate(params_t):
            xy = point_along(boundary.xyz[:, :2], t)
            refs[side * (heads // 2) + i] = spec.meters_to_normalized(xy)
    return refs


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def identical_init(positional_query, proj_w, proj_b, heads: int = DEFAULT_HEADS) -> np.ndarray:
    """First-layer strategy: one sigmoid-squashed point from the positional
    query, replicated bit-identically to every head."""
    point = _sigmoid(np.asarray(proj_w) @ np.asarray(positional_query) + np.asarray(proj_b))
    if point.shape != (2,):
        raise ValueError("identical init projection must produce 2 outputs")
    return np.tile(point, (heads, 1))


def distributed_init(positional_query, proj_w, proj_b, heads: int = DEFAULT_HEADS) -> np.ndarray:
    """Conventional contrast mode: M generally distinct points from an
    M*2-output projection of the positional query."""
    raw = np.asarray(proj_w) @ np.asarray(positional_query) + np.asarray(proj_b)
    if raw.shape != (heads * 2,):
        raise ValueError(f"distributed init projection must produce {heads * 2} outputs")
    return _sigmoid(raw).reshape(heads, 2)
