"""Deterministic synthetic scenes and perturbation models.

Fixtures mirror the structures the benchmarks care about: straight and
curved multi-lane roads, diverge/merge forks, and an intersection with
non-visible boundaries and pedestrian crossings. All randomness is keyed
by (seed, frame id, segment id) sub-streams, so results are independent
of iteration order.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .core import (
    DEFAULT_NUM_POINTS,
    LaneClass,
    LaneGraph,
    LaneSegment,
    LineType,
    Polyline3,
    Scene,
    from_center_and_offset,
)
from .geometry import resample_polyline

PRESETS = ("straight", "curve", "diverge", "merge", "intersection")


@dataclass(frozen=True)
class PerturbSpec:
    """Noise model turning a GT scene into a synthetic prediction."""

    sigma_pos: float = 0.0
    p_drop: float = 0.0
    p_type_flip: float = 0.0
    p_edge_flip: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_pos < 0:
            raise ValueError("sigma_pos must be nonnegative")
        for name in ("p_drop", "p_type_flip", "p_edge_flip"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")


def _stream(*keys) -> np.random.Generator:
    ints = [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(ints))


def _lane(seg_id, xs, ys, zs, half_width, left_type, right_type,
          n=DEFAULT_NUM_POINTS) -> LaneSegment:
    center = resample_polyline(np.stack([xs, ys, zs], axis=1), n)
    # lane-width offset perpendicular to travel direction, in the plane
    d = np.gradient(center.xyz[:, :2], axis=0)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    normal = np.stack([-d[:, 1], d[:, 0]], axis=1)
    offset = np.concatenate([half_width * normal, np.zeros((n, 1))], axis=1)
    left, right = from_center_and_offset(center, offset)
    return LaneSegment(
        id=seg_id,
        centerline=center,
        left_boundary=left,
        right_boundary=right,
        left_type=left_type,
        right_type=right_type,
        cls=LaneClass.LANE_SEGMENT,
    )


def _chain_lanes(lane_ys, x_parts, half_width, types_of):
    """Per lane: consecutive segments along x with successor links."""
    segments: list[LaneSegment] = []
    edges: list[tuple[int, int]] = []
    for lane_idx, y_fn in enumerate(lane_ys):
        prev = None
        for x_lo, x_hi in x_parts:
            xs = np.linspace(x_lo, x_hi, 6)
            ys = np.array([y_fn(x) for x in xs])
            zs = np.zeros_like(xs)
            lt, rt = types_of(lane_idx)
            seg = _lane(len(segments), xs, ys, zs, half_width, lt, rt)
            segments.append(seg)
            if prev is not None:
                edges.append((prev, seg.id))
            prev = seg.id
    return segments, edges


def _graph(segments, edges) -> LaneGraph:
    n = len(segments)
    adjacency = np.zeros((n, n))
    for i, j in edges:
        adjacency[i, j] = 1.0
    return LaneGraph(segments=tuple(segments), adjacency=adjacency)


def _ped_crossing(seg_id, x_center, y_lo, y_hi, half_width,
                  n=DEFAULT_NUM_POINTS) -> LaneSegment:
    """A transverse crossing, already in canonical top-left orientation:
    both edges point along +y, the left edge on the smaller-x side."""
    ys = np.linspace(y_lo, y_hi, n)
    left = np.stack([np.full(n, x_center - half_width), ys, np.zeros(n)], axis=1)
    right = np.stack([np.full(n, x_center + half_width), ys, np.zeros(n)], axis=1)
    return LaneSegment(
        id=seg_id,
        centerline=Polyline3(0.5 * (left + right)),
        left_boundary=Polyline3(left),
        right_boundary=Polyline3(right),
        left_type=LineType.NON_VISIBLE,
        right_type=LineType.NON_VISIBLE,
        cls=LaneClass.PED_CROSSING,
    )


def _outer_types(lane_idx, lane_count):
    left = LineType.SOLID if lane_idx == 0 else LineType.DASHED
    right = LineType.SOLID if lane_idx == lane_count - 1 else LineType.DASHED
    return left, right


def _gen_straight(rng) -> tuple[list[LaneSegment], list[tuple[int, int]]]:
    lane_count = int(rng.integers(2, 4))
    width = rng.uniform(3.2, 3.8)
    y0 = rng.uniform(-4.0, 4.0)
    ys = [y0 + (i - (lane_count - 1) / 2) * width for i in range(lane_count)]
    split = rng.uniform(-8.0, 8.0)
    return _chain_lanes(
        [lambda x, yy=y: yy for y in ys],
        [(-40.0, split), (split, 40.0)],
        width / 2,
        lambda i: _outer_types(i, lane_count),
    )


def _gen_curve(rng) -> tuple[list[LaneSegment], list[tuple[int, int]]]:
    lane_count = int(rng.integers(2, 4))
    width = rng.uniform(3.2, 3.6)
    radius = rng.uniform(60.0, 90.0) * (1 if rng.uniform() < 0.5 else -1)

    def arc(offset):
        def y_fn(x):
            return np.sign(radius) * (abs(radius) - np.sqrt(radius**2 - x**2)) + offset
        return y_fn

    ys = [(i - (lane_count - 1) / 2) * width for i in range(lane_count)]
    return _chain_lanes(
        [arc(y) for y in ys],
        [(-35.0, 0.0), (0.0, 35.0)],
        width / 2,
        lambda i: _outer_types(i, lane_count),
    )


def _gen_diverge(rng) -> tuple[list[LaneSegment], list[tuple[int, int]]]:
    width = rng.uniform(3.2, 3.8)
    y0 = rng.uniform(-2.0, 2.0)
    xs_a = np.linspace(-40.0, -5.0, 6)
    a = _lane(0, xs_a, np.full(6, y0), np.zeros(6), width / 2,
              LineType.SOLID, LineType.SOLID)
    xs_b = np.linspace(-5.0, 35.0, 6)
    b = _lane(1, xs_b, y0 + 0.0 * xs_b, np.zeros(6), width / 2,
              LineType.SOLID, LineType.DASHED)
    drift = rng.uniform(6.0, 10.0)
    c_ys = y0 - drift * ((xs_b + 5.0) / 40.0) ** 2
    c = _lane(2, xs_b, c_ys, np.zeros(6), width / 2, LineType.DASHED, LineType.SOLID)
    return [a, b, c], [(0, 1), (0, 2)]


def _gen_merge(rng) -> tuple[list[LaneSegment], list[tuple[int, int]]]:
    width = rng.uniform(3.2, 3.8)
    y0 = rng.uniform(-2.0, 2.0)
    xs_in = np.linspace(-40.0, 0.0, 6)
    a = _lane(0, xs_in, np.full(6, y0), np.zeros(6), width / 2,
              LineType.SOLID, LineType.DASHED)
    drift = rng.uniform(6.0, 10.0)
    b_ys = y0 - drift * (1.0 - (xs_in + 40.0) / 40.0) ** 2
    b = _lane(1, xs_in, b_ys, np.zeros(6), width / 2, LineType.DASHED, LineType.SOLID)
    xs_out = np.linspace(0.0, 40.0, 6)
    c = _lane(2, xs_out, np.full(6, y0), np.zeros(6), width / 2,
              LineType.SOLID, LineType.SOLID)
    return [a, b, c], [(0, 2), (1, 2)]


def _gen_intersection(rng) -> tuple[list[LaneSegment], list[tuple[int, int]]]:
    width = rng.uniform(3.2, 3.6)
    box = rng.uniform(9.0, 12.0)
    segments: list[LaneSegment] = []
    edges: list[tuple[int, int]] = []
    for lane_idx, y in enumerate((-width / 2, width / 2)):
        parts = [
            ((-45.0, -box), (LineType.SOLID, LineType.DASHED) if lane_idx else
             (LineType.DASHED, LineType.SOLID)),
            ((-box, box), (LineType.NON_VISIBLE, LineType.NON_VISIBLE)),
            ((box, 45.0), (LineType.SOLID, LineType.DASHED) if lane_idx else
             (LineType.DASHED, LineType.SOLID)),
        ]
        prev = None
        for (x_lo, x_hi), (lt, rt) in parts:
            xs = np.linspace(x_lo, x_hi, 6)
            seg = _lane(len(segments), xs, np.full(6, y), np.zeros(6), width / 2, lt, rt)
            segments.append(seg)
            if prev is not None:
                edges.append((prev, seg.id))
            prev = seg.id
    for sign in (-1.0, 1.0):
        segments.append(
            _ped_crossing(
                len(segments),
                sign * (box + rng.uniform(1.8, 2.6)),
                -width - 2.0,
                width + 2.0,
                rng.uniform(1.2, 1.8),
            )
        )
    return segments, edges


_GENERATORS = {
    "straight": _gen_straight,
    "curve": _gen_curve,
    "diverge": _gen_diverge,
    "merge": _gen_merge,
    "intersection": _gen_intersection,
}


def generate(preset: str, seed: int = 0) -> Scene:
    """Build one deterministic scene; same (preset, seed) is bit-identical."""
    if preset not in _GENERATORS:
        raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")
    rng = _stream(seed, preset)
    segments, edges = _GENERATORS[preset](rng)
    return Scene(frame_id=f"{preset}-{seed}", graph=_graph(segments, edges))


def corpus(count: int, seed: int = 0, presets=PRESETS) -> list[Scene]:
    """count scenes cycling through the presets with distinct seeds."""
    return [generate(presets[i % len(presets)], seed + i) for i in range(count)]


def _flip_type(rng, t: LineType) -> LineType:
    others = [x for x in LineType if x is not t]
    return others[int(rng.integers(0, len(others)))]


def perturb(scene: Scene, spec: PerturbSpec) -> Scene:
    """A synthetic prediction: jittered points, dropped segments, flipped
    types and edges, confidence 1 / (1 + mean point displacement)."""
    kept: list[LaneSegment] = []
    kept_idx: list[int] = []
    for idx, seg in enumerate(scene.graph.segments):
        rng = _stream(spec.seed, scene.frame_id, seg.id)
        if rng.uniform() < spec.p_drop:
            continue
        lines = seg.lines()
        noise = rng.normal(0.0, 1.0, lines.shape) * spec.sigma_pos
        displacement = float(np.linalg.norm(noise, axis=2).mean())
        left, center, right = lines + noise
        left_type, right_type = seg.left_type, seg.right_type
        if rng.uniform() < spec.p_type_flip:
            left_type = _flip_type(rng, left_type)
        if rng.uniform() < spec.p_type_flip:
            right_type = _flip_type(rng, right_type)
        kept.append(
            LaneSegment(
                id=seg.id,
                centerline=Polyline3(center),
                left_boundary=Polyline3(left),
                right_boundary=Polyline3(right),
                left_type=left_type,
                right_type=right_type,
                cls=seg.cls,
                confidence=1.0 / (1.0 + displacement),
            )
        )
        kept_idx.append(idx)

    full = scene.graph.adjacency.copy()
    n = full.shape[0]
    if spec.p_edge_flip > 0.0:
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                rng = _stream(spec.seed, scene.frame_id, "edge", i, j)
                if rng.uniform() < spec.p_edge_flip:
                    full[i, j] = 1.0 - full[i, j]
    sub = full[np.ix_(kept_idx, kept_idx)] if kept_idx else np.zeros((0, 0))
    return Scene(
        frame_id=scene.frame_id,
        graph=LaneGraph(segments=tuple(kept), adjacency=sub),
        x_range=scene.x_range,
        y_range=scene.y_range,
    )
