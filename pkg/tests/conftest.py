import numpy as np
import pytest

from lanesegkit.core import (
    LaneClass,
    LaneGraph,
    LaneSegment,
    LineType,
    Polyline3,
    Scene,
)


def straight_segment(seg_id=0, x0=0.0, x1=10.0, y=0.0, half_width=1.75,
                     n=10, cls=LaneClass.LANE_SEGMENT,
                     left_type=LineType.SOLID, right_type=LineType.DASHED,
                     confidence=1.0) -> LaneSegment:
    xs = np.linspace(x0, x1, n)
    center = np.stack([xs, np.full(n, y), np.zeros(n)], axis=1)
    off = np.tile([0.0, half_width, 0.0], (n, 1))
    return LaneSegment(
        id=seg_id,
        centerline=Polyline3(center),
        left_boundary=Polyline3(center + off),
        right_boundary=Polyline3(center - off),
        left_type=left_type,
        right_type=right_type,
        cls=cls,
        confidence=confidence,
    )


def transverse_segment(seg_id=0, x=0.0, y0=-5.0, y1=5.0, half_width=1.5, n=10,
                       cls=LaneClass.LANE_SEGMENT,
                       left_type=LineType.SOLID, right_type=LineType.DASHED):
    """A lane running along +y; shifting it in x moves every point off it."""
    ys = np.linspace(y0, y1, n)
    center = np.stack([np.full(n, x), ys, np.zeros(n)], axis=1)
    off = np.tile([half_width, 0.0, 0.0], (n, 1))
    return LaneSegment(
        id=seg_id,
        centerline=Polyline3(center),
        left_boundary=Polyline3(center + off),
        right_boundary=Polyline3(center - off),
        left_type=left_type,
        right_type=right_type,
        cls=cls,
    )


def shifted(segment: LaneSegment, dx=0.0, dy=0.0, dz=0.0, confidence=None,
            seg_id=None) -> LaneSegment:
    d = np.array([dx, dy, dz])
    return LaneSegment(
        id=segment.id if seg_id is None else seg_id,
        centerline=Polyline3(segment.centerline.xyz + d),
        left_boundary=Polyline3(segment.left_boundary.xyz + d),
        right_boundary=Polyline3(segment.right_boundary.xyz + d),
        left_type=segment.left_type,
        right_type=segment.right_type,
        cls=segment.cls,
        confidence=segment.confidence if confidence is None else confidence,
    )


def scene_of(segments, edges=(), frame_id="f0") -> Scene:
    n = len(segments)
    adj = np.zeros((n, n))
    for i, j in edges:
        adj[i, j] = 1.0
    return Scene(frame_id=frame_id, graph=LaneGraph(tuple(segments), adj))


@pytest.fixture
def fixture_scene() -> Scene:
    a = straight_segment(0, -20.0, 0.0, y=0.0)
    b = straight_segment(1, 0.0, 20.0, y=0.0)
    c = straight_segment(2, -20.0, 0.0, y=3.5)
    return scene_of([a, b, c], edges=[(0, 1)])
