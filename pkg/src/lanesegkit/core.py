"""Domain types for lane segments, lane graphs, and scenes.

A lane segment bundles one lane's centerline, its left/right boundaries
(ordered 3D polylines of equal length), boundary line types, a class
(regular lane or pedestrian crossing), and an optional confidence.
A lane graph stores segments plus a square adjacency matrix whose entry
(i, j) scores "segment j follows segment i".
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

DEFAULT_NUM_POINTS = 10
DEFAULT_X_RANGE = (-50.0, 50.0)
DEFAULT_Y_RANGE = (-25.0, 25.0)
RANGE_SLACK_M = 1.0


class LineType(enum.Enum):
    NON_VISIBLE = "non_visible"
    SOLID = "solid"
    DASHED = "dashed"

    @property
    def index(self) -> int:
        return _LINE_TYPE_ORDER.index(self)


_LINE_TYPE_ORDER = (LineType.NON_VISIBLE, LineType.SOLID, LineType.DASHED)


class LaneClass(enum.Enum):
    LANE_SEGMENT = "lane_segment"
    PED_CROSSING = "ped_crossing"

    @property
    def index(self) -> int:
        return 0 if self is LaneClass.LANE_SEGMENT else 1


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Point3:
    """A point in the ego BEV frame: x forward, y left, z up (meters)."""

    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        for v in (self.x, self.y, self.z):
            if not np.isfinite(v):
                raise ValueError(f"non-finite coordinate in {self!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class Polyline3:
    """An ordered set of >= 2 points in 3D; direction is first -> last."""

    xyz: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.xyz, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != 3:
            raise ValueError(f"polyline must have shape (N, 3), got {a.shape}")
        if a.shape[0] < 2:
            raise ValueError("polyline needs at least 2 points")
        if not np.all(np.isfinite(a)):
            raise ValueError("polyline has non-finite coordinates")
        object.__setattr__(self, "xyz", _readonly(a))

    @classmethod
    def from_points(cls, points) -> "Polyline3":
        rows = []
        for p in points:
            if isinstance(p, Point3):
                rows.append([p.x, p.y, p.z])
            else:
                q = list(p)
                rows.append(q + [0.0] * (3 - len(q)))
        return cls(np.array(rows, dtype=np.float64))

    def __array__(self, dtype=None):
        return self.xyz if dtype is None else self.xyz.astype(dtype)

    def __len__(self) -> int:
        return self.xyz.shape[0]

    @property
    def n(self) -> int:
        return self.xyz.shape[0]

    def points(self) -> list[Point3]:
        return [Point3(*row) for row in self.xyz]

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.xyz, axis=0), axis=1).sum())

    def reversed(self) -> "Polyline3":
        return Polyline3(self.xyz[::-1])


@dataclass(frozen=True, eq=False)
class LaneSegment:
    """One lane instance: geometry, boundary semantics, class, confidence.

    Ground truth carries confidence 1.0 so predictions and GT share a type;
    serialization drops the field on the GT side.
    """

    id: int
    centerline: Polyline3
    left_boundary: Polyline3
    right_boundary: Polyline3
    left_type: LineType = LineType.NON_VISIBLE
    right_type: LineType = LineType.NON_VISIBLE
    cls: LaneClass = LaneClass.LANE_SEGMENT
    confidence: float = 1.0

    def __post_init__(self):
        n = self.centerline.n
        if self.left_boundary.n != n or self.right_boundary.n != n:
            raise ValueError(
                f"segment {self.id}: centerline/boundaries must share a point count"
            )
        if not np.isfinite(self.confidence):
            raise ValueError(f"segment {self.id}: non-finite confidence")

    @property
    def num_points(self) -> int:
        return self.centerline.n

    def lines(self) -> np.ndarray:
        """Stacked (3, N, 3) array: left, center, right."""
        return np.stack(
            [self.left_boundary.xyz, self.centerline.xyz, self.right_boundary.xyz]
        )

    def boundary_points(self) -> np.ndarray:
        """Left and right boundary points as one (2N, 3) point set."""
        return np.concatenate([self.left_boundary.xyz, self.right_boundary.xyz])


@dataclass(frozen=True, eq=False)
class LaneGraph:
    """Segments plus adjacency; adjacency[i, j] scores j following i.

    Construction rejects adjacency values outside [0, 1] instead of
    clamping them; self-loops are reported by validate_scene.
    """

    segments: tuple[LaneSegment, ...]
    adjacency: np.ndarray

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        a = np.asarray(self.adjacency, dtype=np.float64)
        n = len(segs)
        if a.shape != (n, n):
            raise ValueError(f"adjacency shape {a.shape} does not match {n} segments")
        if n and not np.all(np.isfinite(a)):
            raise ValueError("adjacency has non-finite entries")
        if n and (a.min() < 0.0 or a.max() > 1.0):
            raise ValueError("adjacency entries must lie in [0, 1]")
        object.__setattr__(self, "adjacency", _readonly(a))

    def __len__(self) -> int:
        return len(self.segments)

    @classmethod
    def empty(cls) -> "LaneGraph":
        return cls(segments=(), adjacency=np.zeros((0, 0)))

    def successors(self, i: int) -> list[int]:
        return [j for j in range(len(self.segments)) if self.adjacency[i, j] > 0.5]


@dataclass(frozen=True, eq=False)
class Scene:
    """One annotated frame: a lane graph over a metric BEV rectangle."""

    frame_id: str
    graph: LaneGraph
    x_range: tuple[float, float] = DEFAULT_X_RANGE
    y_range: tuple[float, float] = DEFAULT_Y_RANGE

    def __post_init__(self):
        object.__setattr__(self, "x_range", (float(self.x_range[0]), float(self.x_range[1])))
        object.__setattr__(self, "y_range", (float(self.y_range[0]), float(self.y_range[1])))


@dataclass(frozen=True)
class Violation:
    """One validation finding: which rule failed on which segment."""

    rule: str
    segment_id: int | None
    message: str

    def __str__(self) -> str:
        where = "scene" if self.segment_id is None else f"segment {self.segment_id}"
        return f"[{self.rule}] {where}: {self.message}"


def from_center_and_offset(center, offset) -> tuple[Polyline3, Polyline3]:
    """Rebuild boundaries from a centerline and a per-point offset vector.

    left[i] = center[i] + offset[i], right[i] = center[i] - offset[i], so the
    midpoint of the two boundaries reproduces the centerline exactly.
    """
    c = np.asarray(center, dtype=np.float64)
    o = np.asarray(offset, dtype=np.float64)
    if c.shape != o.shape:
        raise ValueError(f"center shape {c.shape} != offset shape {o.shape}")
    return Polyline3(c + o), Polyline3(c - o)


def polygon_of(segment: LaneSegment) -> np.ndarray:
    """Closed 2D outline of the drivable area: left boundary, then the right
    boundary reversed, projected to (x, y). Shape (2*N, 2); closure implicit."""
    left = segment.left_boundary.xyz[:, :2]
    right = segment.right_boundary.xyz[::-1, :2]
    return np.concatenate([left, right])


def validate_scene(scene: Scene) -> list[Violation]:
    """Check every type invariant; returns findings instead of raising."""
    out: list[Violation] = []
    graph = scene.graph
    n = len(graph.segments)

    if graph.adjacency.shape != (n, n):
        out.append(
            Violation("adjacency-shape", None,
                      f"adjacency {graph.adjacency.shape} vs {n} segments")
        )
    else:
        a = graph.adjacency
        if n and (a.min() < 0.0 or a.max() > 1.0):
            out.append(Violation("adjacency-range", None, "entries outside [0, 1]"))
        for i in range(n):
            if a[i, i] != 0.0:
                out.append(
                    Violation("self-loop", graph.segments[i].id,
                              f"adjacency diagonal entry is {a[i, i]}")
                )

    (x_lo, x_hi), (y_lo, y_hi) = scene.x_range, scene.y_range
    for seg in graph.segments:
        if not (0.0 <= seg.confidence <= 1.0):
            out.append(
                Violation("confidence-range", seg.id, f"confidence {seg.confidence}")
            )
        counts = {seg.centerline.n, seg.left_boundary.n, seg.right_boundary.n}
        if len(counts) != 1:
            out.append(Violation("point-count", seg.id, f"line lengths {sorted(counts)}"))
        pts = np.concatenate(
            [seg.centerline.xyz, seg.left_boundary.xyz, seg.right_boundary.xyz]
        )
        if (
            pts[:, 0].min() < x_lo - RANGE_SLACK_M
            or pts[:, 0].max() > x_hi + RANGE_SLACK_M
            or pts[:, 1].min() < y_lo - RANGE_SLACK_M
            or pts[:, 1].max() > y_hi + RANGE_SLACK_M
        ):
            out.append(Violation("point-range", seg.id, "points outside scene range"))

    ids = [seg.id for seg in graph.segments]
    if len(set(ids)) != len(ids):
        out.append(Violation("duplicate-id", None, f"segment ids {ids}"))
    return out
