"""Label preprocessing: DFS merging of lane pieces, pedestrian-crossing
normalization, and decomposition into sub-task labels."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    DEFAULT_NUM_POINTS,
    LaneClass,
    LaneGraph,
    LaneSegment,
    LineType,
    Polyline3,
    polygon_of,
)
from .geometry import principal_axis, resample_polyline

DEDUP_TOLERANCE_M = 0.1


@dataclass(frozen=True, eq=False)
class LanePiece(LaneSegment):
    """A raw map piece before merging: a lane segment plus the flags that
    gate chain concatenation."""

    in_intersection: bool = False
    successor_ids: tuple[int, ...] = ()

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "successor_ids", tuple(self.successor_ids))


class MapElementClass(enum.Enum):
    DIVIDER = "divider"
    PED_CROSSING = "ped_crossing"


@dataclass(frozen=True, eq=False)
class MapElement:
    """A decomposed map element: one polyline with a class and confidence."""

    id: int
    cls: MapElementClass
    points: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        a = np.array(self.points, dtype=np.float64)
        a.flags.writeable = False
        object.__setattr__(self, "points", a)


def _mergeable(a: LanePiece, b: LanePiece) -> bool:
    return (
        a.cls is LaneClass.LANE_SEGMENT
        and b.cls is LaneClass.LANE_SEGMENT
        and a.left_type is b.left_type
        and a.right_type is b.right_type
        and a.in_intersection == b.in_intersection
    )


def _concat_line(lines: list[np.ndarray]) -> np.ndarray:
    out = [lines[0]]
    for line in lines[1:]:
        # drop the duplicated junction point when pieces share an endpoint
        if np.allclose(out[-1][-1], line[0], atol=1e-9):
            out.append(line[1:])
        else:
            out.append(line)
    return np.concatenate(out)


def dfs_merge(pieces, num_points: int = DEFAULT_NUM_POINTS) -> LaneGraph:
    """Concatenate chains of pieces broken only by artificial breakpoints.

    A junction u -> v merges iff v is u's only successor, u is v's only
    predecessor, both share left/right line types and the intersection
    flag. Centerline and both boundaries are concatenated as a whole and
    resampled back to num_points; successor relations are rewritten onto
    the merged segments. Raises on a cyclic merge chain.
    """
    pieces = list(pieces)
    by_id = {p.id: p for p in pieces}
    if len(by_id) != len(pieces):
        raise ValueError("duplicate piece ids")
    for p in pieces:
        for s in p.successor_ids:
            if s not in by_id:
                raise ValueError(f"piece {p.id} lists unknown successor {s}")

    pred_count: dict[int, int] = {p.id: 0 for p in pieces}
    for p in pieces:
        for s in p.successor_ids:
            pred_count[s] += 1
    pred_of: dict[int, int] = {}
    for p in pieces:
        for s in p.successor_ids:
            pred_of[s] = p.id  # unique when pred_count[s] == 1

    def merges_into_next(pid: int) -> int | None:
        p = by_id[pid]
        if len(p.successor_ids) != 1:
            return None
        nxt = p.successor_ids[0]
        if pred_count[nxt] != 1:
            return None
        if not _mergeable(p, by_id[nxt]):
            return None
        return nxt

    def merges_from_prev(pid: int) -> bool:
        if pred_count[pid] != 1:
            return False
        prev = pred_of[pid]
        return merges_into_next(prev) == pid

    chains: list[list[int]] = []
    chain_of: dict[int, int] = {}
    for start in sorted(by_id):
        if merges_from_prev(start):
            continue
        chain = [start]
        seen = {start}
        cur = start
        while True:
            nxt = merges_into_next(cur)
            if nxt is None:
                break
            if nxt in seen:
                raise ValueError(f"cyclic merge chain through pieces {chain + [nxt]}")
            chain.append(nxt)
            seen.add(nxt)
            cur = nxt
        for pid in chain:
            chain_of[pid] = len(chains)
        chains.append(chain)

    if len(chain_of) != len(pieces):
        # every piece must land in exactly one chain (cycles of mergeable
        # pieces with no entry point never produce a chain start)
        leftover = sorted(set(by_id) - set(chain_of))
        raise ValueError(f"cyclic merge chain through pieces {leftover}")

    merged: list[LanePiece] = []
    for chain in chains:
        members = [by_id[pid] for pid in chain]
        head, tail = members[0], members[-1]
        if len(members) == 1:
            merged.append(head)
            continue
        center = _concat_line([m.centerline.xyz for m in members])
        left = _concat_line([m.left_boundary.xyz for m in members])
        right = _concat_line([m.right_boundary.xyz for m in members])
        merged.append(
            LanePiece(
                id=head.id,
                centerline=resample_polyline(center, num_points),
                left_boundary=resample_polyline(left, num_points),
                right_boundary=resample_polyline(right, num_points),
                left_type=head.left_type,
                right_type=head.right_type,
                cls=head.cls,
                confidence=head.confidence,
                in_intersection=head.in_intersection,
                successor_ids=tail.successor_ids,
            )
        )

    n = len(merged)
    adjacency = np.zeros((n, n))
    for i, seg in enumerate(merged):
        for s in seg.successor_ids:
            j = chain_of[s]
            if j != i:
                adjacency[i, j] = 1.0
    final = [
        replace(seg, successor_ids=tuple(
            merged[j].id for j in range(n) if adjacency[i, j] > 0.5
        ))
        for i, seg in enumerate(merged)
    ]
    return LaneGraph(segments=tuple(final), adjacency=adjacency)


def graph_to_pieces(graph: LaneGraph) -> list[LanePiece]:
    """View a lane graph as mergeable pieces (idempotence helper)."""
    out = []
    for i, seg in enumerate(graph.segments):
        succ = tuple(graph.segments[j].id for j in graph.successors(i))
        if isinstance(seg, LanePiece):
            out.append(replace(seg, successor_ids=succ))
        else:
            out.append(
                LanePiece(
                    id=seg.id,
                    centerline=seg.centerline,
                    left_boundary=seg.left_boundary,
                    right_boundary=seg.right_boundary,
                    left_type=seg.left_type,
                    right_type=seg.right_type,
                    cls=seg.cls,
                    confidence=seg.confidence,
                    successor_ids=succ,
                )
            )
    return out


def orient_top_left(direction) -> np.ndarray:
    """Canonicalize a 2D axis direction to face top-left (+x forward,
    +y left): flip when the dot with (1, 1)/sqrt(2) is negative, and break
    the exact tie toward positive y."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    s = (d[0] + d[1]) / np.sqrt(2.0)
    if abs(s) <= 1e-12:
        return d if d[1] > 0 else -d
    return d if s > 0 else -d


def _split_end_edges(poly: np.ndarray, axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a closed polygon into its two side chains by removing the two
    least axis-aligned, non-adjacent edges (the crossing's short ends)."""
    n = len(poly)
    edges = np.roll(poly, -1, axis=0) - poly
    lengths = np.linalg.norm(edges, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        alignment = np.where(lengths > 0, np.abs(edges @ axis) / lengths, np.inf)

    best = None
    for i in range(n):
        for j in range(i + 1, n):
            gap = min(j - i, n - (j - i))
            if gap < 2:
                continue
            score = (alignment[i] + alignment[j], i, j)
            if best is None or score < best:
                best = score
    if best is None:
        raise ValueError("polygon too small to split into two chains")
    _, i, j = best

    chain_a = poly[i + 1: j + 1]
    chain_b = np.concatenate([poly[j + 1:], poly[: i + 1]])
    return chain_a, chain_b


def normalize_ped_crossing(polygon, seg_id: int = 0,
                           num_points: int = DEFAULT_NUM_POINTS) -> LaneSegment:
    """Reduce a crossing polygon to a transverse lane segment.

    The polygon boundary is split into two chains along its principal axis;
    both are oriented along the canonical top-left direction and resampled,
    the centerline is their midpoint curve, and the left chain is the one
    on the +90 degree side of the direction.
    """
    poly = np.asarray(polygon, dtype=np.float64)
    if poly.ndim != 2 or len(poly) < 4:
        raise ValueError("crossing polygon needs at least 4 vertices")
    if poly.shape[1] == 2:
        poly = np.concatenate([poly, np.zeros((len(poly), 1))], axis=1)
    span = poly[:, :2].max(axis=0) - poly[:, :2].min(axis=0)
    if np.linalg.norm(span) <= 1e-12:
        raise ValueError("degenerate crossing polygon")

    d = orient_top_left(principal_axis(poly[:, :2]))
    chain_a, chain_b = _split_end_edges(poly, np.concatenate([d, [0.0]]))

    def oriented(chain: np.ndarray) -> np.ndarray:
        if len(chain) < 2:
            raise ValueError("degenerate crossing polygon chain")
        forward = (chain[-1, :2] - chain[0, :2]) @ d
        return chain if forward >= 0 else chain[::-1]

    chain_a, chain_b = oriented(chain_a), oriented(chain_b)
    normal = np.array([-d[1], d[0]])
    side_a = (chain_a[:, :2].mean(axis=0)) @ normal
    side_b = (chain_b[:, :2].mean(axis=0)) @ normal
    left_chain, right_chain = (chain_a, chain_b) if side_a >= side_b else (chain_b, chain_a)

    left = resample_polyline(left_chain, num_points)
    right = resample_polyline(right_chain, num_points)
    center = Polyline3(0.5 * (left.xyz + right.xyz))
    return LaneSegment(
        id=seg_id,
        centerline=center,
        left_boundary=left,
        right_boundary=right,
        left_type=LineType.NON_VISIBLE,
        right_type=LineType.NON_VISIBLE,
        cls=LaneClass.PED_CROSSING,
    )


def _mean_line_distance(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        return np.inf
    direct = float(np.linalg.norm(a - b, axis=1).mean())
    flipped = float(np.linalg.norm(a - b[::-1], axis=1).mean())
    return min(direct, flipped)


def decompose_to_map_elements(graph: LaneGraph,
                              dedup_tol: float = DEDUP_TOLERANCE_M) -> list[MapElement]:
    """Split a lane graph into map elements.

    Visible lane boundaries become dividers, deduplicated when two lanes
    share one (mean point distance within dedup_tol, either direction);
    crossings pass through as the closed outline of their two edges.
    """
    elements: list[MapElement] = []
    divider_lines: list[np.ndarray] = []
    next_id = 0
    for seg in graph.segments:
        if seg.cls is LaneClass.PED_CROSSING:
            outline = np.concatenate([seg.left_boundary.xyz, seg.right_boundary.xyz[::-1]])
            elements.append(
                MapElement(next_id, MapElementClass.PED_CROSSING, outline, seg.confidence)
            )
            next_id += 1
            continue
        for line, line_type in (
            (seg.left_boundary.xyz, seg.left_type),
            (seg.right_boundary.xyz, seg.right_type),
        ):
            if line_type is LineType.NON_VISIBLE:
                continue
            if any(_mean_line_distance(line, seen) <= dedup_tol for seen in divider_lines):
                continue
            divider_lines.append(line)
            elements.append(
                MapElement(next_id, MapElementClass.DIVIDER, line, seg.confidence)
            )
            next_id += 1
    return elements


def extract_centerlines(graph: LaneGraph) -> LaneGraph:
    """Centerline-only view: boundaries collapse onto the centerline,
    crossings are dropped, adjacency is restricted to the kept segments."""
    keep = [i for i, s in enumerate(graph.segments) if s.cls is LaneClass.LANE_SEGMENT]
    segs = []
    for i in keep:
        s = graph.segments[i]
        segs.append(
            LaneSegment(
                id=s.id,
                centerline=s.centerline,
                left_boundary=s.centerline,
                right_boundary=s.centerline,
                left_type=LineType.NON_VISIBLE,
                right_type=LineType.NON_VISIBLE,
                cls=LaneClass.LANE_SEGMENT,
                confidence=s.confidence,
            )
        )
    adjacency = graph.adjacency[np.ix_(keep, keep)] if keep else np.zeros((0, 0))
    return LaneGraph(segments=tuple(segs), adjacency=adjacency)
