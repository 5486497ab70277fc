"""File formats and rendering.

Scene files are canonical JSON: sorted keys, two-space indent, every float
formatted with six decimals, so serialization is deterministic and
save-load round trips are byte-identical. Ground-truth files omit the
confidence field and store successors as plain id lists; prediction files
may carry confidences and {id, score} successor lists. BEV grids use a
one-line JSON header followed by little-endian float64 data.
"""

from __future__ import annotations

import json
from xml.sax.saxutils import escape

import numpy as np

from .core import (
    LaneClass,
    LaneGraph,
    LaneSegment,
    LineType,
    Polyline3,
    Scene,
    validate_scene,
)
from .attention import BevGrid
from .geometry import GridSpec
from .metrics import EvalReport
from .preprocess import LanePiece, MapElement, MapElementClass

FORMAT_VERSION = 1

_SEGMENT_KEYS = {
    "id", "class", "centerline", "left_boundary", "right_boundary",
    "left_type", "right_type", "confidence", "successors", "in_intersection",
}


class SceneFormatError(ValueError):
    """File-format failure with a machine-readable code:
    malformed-json, schema, or invariant."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _canonical(value, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [
            f'{pad}  {json.dumps(str(k))}: {_canonical(v, indent + 1)}'
            for k, v in sorted(value.items())
        ]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        flat = all(
            isinstance(v, (int, float, np.integer)) and not isinstance(v, bool)
            for v in value
        )
        inner = [_canonical(v, indent + 1) for v in value]
        if flat and sum(len(s) for s in inner) < 72:
            return "[" + ", ".join(inner) + "]"
        return "[\n" + ",\n".join(f"{pad}  {s}" for s in inner) + f"\n{pad}]"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6f}"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return json.dumps(value)
    raise TypeError(f"cannot canonicalize {type(value)}")


def canonical_json(doc) -> str:
    return _canonical(doc) + "\n"


def _line_to_json(poly: Polyline3):
    return [[float(v) for v in row] for row in poly.xyz]


def _scene_to_json(scene: Scene) -> dict:
    graph = scene.graph
    binary = graph.adjacency.size == 0 or bool(
        np.isin(graph.adjacency, (0.0, 1.0)).all()
    )
    segs = []
    for i, seg in enumerate(graph.segments):
        entry = {
            "id": int(seg.id),
            "class": seg.cls.value,
            "centerline": _line_to_json(seg.centerline),
            "left_boundary": _line_to_json(seg.left_boundary),
            "right_boundary": _line_to_json(seg.right_boundary),
            "left_type": seg.left_type.value,
            "right_type": seg.right_type.value,
        }
        if seg.confidence != 1.0:
            entry["confidence"] = float(seg.confidence)
        if isinstance(seg, LanePiece) and seg.in_intersection:
            entry["in_intersection"] = True
        if binary:
            entry["successors"] = [
                int(graph.segments[j].id)
                for j in range(len(graph.segments))
                if graph.adjacency[i, j] > 0.5
            ]
        else:
            entry["successors"] = [
                {"id": int(graph.segments[j].id), "score": float(graph.adjacency[i, j])}
                for j in range(len(graph.segments))
                if f"{graph.adjacency[i, j]:.6f}" != "0.000000"
            ]
        segs.append(entry)
    return {
        "frame_id": scene.frame_id,
        "range": {"x": list(scene.x_range), "y": list(scene.y_range)},
        "lane_segments": segs,
    }


def scenes_to_document(scenes) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "frames": [_scene_to_json(s) for s in scenes],
    }


def save_scenes(scenes, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(canonical_json(scenes_to_document(scenes)))


def save_scene(scene: Scene, path) -> None:
    save_scenes([scene], path)


def _require(cond: bool, code: str, message: str):
    if not cond:
        raise SceneFormatError(code, message)


def _parse_line(raw, what: str, num_points: int | None) -> Polyline3:
    _require(isinstance(raw, list) and len(raw) >= 2, "schema", f"{what} must be a point list")
    if num_points is not None:
        _require(
            len(raw) == num_points,
            "invariant",
            f"{what} has {len(raw)} points, expected {num_points}",
        )
    for p in raw:
        _require(
            isinstance(p, list) and len(p) == 3
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in p),
            "schema", f"{what} points must be [x, y, z] triples",
        )
    try:
        return Polyline3(np.asarray(raw, dtype=np.float64))
    except ValueError as exc:
        raise SceneFormatError("invariant", f"{what}: {exc}") from exc


def _parse_frame(frame, strict: bool, kind: str | None, num_points: int | None) -> Scene:
    _require(isinstance(frame, dict), "schema", "frame must be an object")
    known = {"frame_id", "range", "lane_segments"}
    if strict:
        unknown = set(frame) - known
        _require(not unknown, "schema", f"unknown frame fields {sorted(unknown)}")
    _require("frame_id" in frame and isinstance(frame["frame_id"], str),
             "schema", "frame_id missing or not a string")
    rng = frame.get("range")
    _require(
        isinstance(rng, dict) and set(rng) == {"x", "y"}
        and all(isinstance(rng[a], list) and len(rng[a]) == 2 for a in "xy"),
        "schema", "range must be {x: [lo, hi], y: [lo, hi]}",
    )
    raw_segs = frame.get("lane_segments")
    _require(isinstance(raw_segs, list), "schema", "lane_segments must be a list")

    segments: list[LaneSegment] = []
    successor_spec: list[list] = []
    for raw in raw_segs:
        _require(isinstance(raw, dict), "schema", "lane segment must be an object")
        if strict:
            unknown = set(raw) - _SEGMENT_KEYS
            _require(not unknown, "schema", f"unknown segment fields {sorted(unknown)}")
        for key in ("id", "class", "centerline", "left_boundary", "right_boundary",
                    "left_type", "right_type", "successors"):
            _require(key in raw, "schema", f"segment missing field {key!r}")
        seg_id = raw["id"]
        _require(isinstance(seg_id, int) and not isinstance(seg_id, bool),
                 "schema", "segment id must be an integer")
        what = f"segment {seg_id}"
        try:
            cls = LaneClass(raw["class"])
            left_type = LineType(raw["left_type"])
            right_type = LineType(raw["right_type"])
        except ValueError as exc:
            raise SceneFormatError("schema", f"{what}: {exc}") from exc
        confidence = raw.get("confidence", 1.0)
        if kind == "gt":
            _require("confidence" not in raw, "schema",
                     f"{what}: confidence not allowed on ground truth")
        _require(isinstance(confidence, (int, float)) and not isinstance(confidence, bool),
                 "schema", f"{what}: confidence must be a number")
        in_intersection = raw.get("in_intersection", False)
        _require(isinstance(in_intersection, bool), "schema",
                 f"{what}: in_intersection must be a boolean")
        lines = {
            name: _parse_line(raw[name], f"{what} {name}", num_points)
            for name in ("centerline", "left_boundary", "right_boundary")
        }
        try:
            seg = LanePiece(
                id=seg_id,
                centerline=lines["centerline"],
                left_boundary=lines["left_boundary"],
                right_boundary=lines["right_boundary"],
                left_type=left_type,
                right_type=right_type,
                cls=cls,
                confidence=float(confidence),
                in_intersection=in_intersection,
            ) if in_intersection else LaneSegment(
                id=seg_id,
                centerline=lines["centerline"],
                left_boundary=lines["left_boundary"],
                right_boundary=lines["right_boundary"],
                left_type=left_type,
                right_type=right_type,
                cls=cls,
                confidence=float(confidence),
            )
        except ValueError as exc:
            raise SceneFormatError("invariant", f"{what}: {exc}") from exc
        segments.append(seg)
        successor_spec.append(raw["successors"])

    index_of = {seg.id: i for i, seg in enumerate(segments)}
    _require(len(index_of) == len(segments), "invariant", "duplicate segment ids")
    adjacency = np.zeros((len(segments), len(segments)))
    for i, succ in enumerate(successor_spec):
        _require(isinstance(succ, list), "schema", "successors must be a list")
        for item in succ:
            if isinstance(item, dict):
                _require(kind != "gt", "schema",
                         "scored successors not allowed on ground truth")
                _require(set(item) == {"id", "score"}, "schema",
                         "scored successor must be {id, score}")
                j, score = item["id"], item["score"]
            else:
                j, score = item, 1.0
            _require(isinstance(j, int) and not isinstance(j, bool),
                     "schema", "successor id must be an integer")
            _require(j in index_of, "schema", f"unknown successor id {j}")
            _require(isinstance(score, (int, float)) and not isinstance(score, bool),
                     "schema", "successor score must be a number")
            adjacency[i, index_of[j]] = float(score)

    try:
        graph = LaneGraph(segments=tuple(segments), adjacency=adjacency)
        scene = Scene(
            frame_id=frame["frame_id"],
            graph=graph,
            x_range=tuple(float(v) for v in rng["x"]),
            y_range=tuple(float(v) for v in rng["y"]),
        )
    except ValueError as exc:
        raise SceneFormatError("invariant", str(exc)) from exc

    if strict:
        violations = validate_scene(scene)
        _require(
            not violations, "invariant",
            "; ".join(str(v) for v in violations),
        )
    return scene


def load_scenes(path, strict: bool = True, kind: str | None = None,
                num_points: int | None = 10) -> list[Scene]:
    """Load every frame of a scene file.

    kind="gt" additionally rejects confidence fields and scored successor
    lists; strict mode rejects unknown fields, enforces the 10-point line
    format, and runs validate_scene on every frame.
    """
    if kind not in (None, "gt", "pred"):
        raise ValueError(f"kind must be None, 'gt', or 'pred', got {kind!r}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneFormatError("malformed-json", f"{path}: {exc}") from exc
    _require(isinstance(doc, dict), "schema", "document must be an object")
    if strict:
        unknown = set(doc) - {"format_version", "frames"}
        _require(not unknown, "schema", f"unknown document fields {sorted(unknown)}")
    _require(doc.get("format_version") == FORMAT_VERSION, "schema",
             f"unsupported format_version {doc.get('format_version')!r}")
    frames = doc.get("frames")
    _require(isinstance(frames, list), "schema", "frames must be a list")
    effective_n = num_points if strict else None
    return [_parse_frame(f, strict, kind, effective_n) for f in frames]


def load_scene(path, strict: bool = True, kind: str | None = None) -> Scene:
    """Load a single-frame scene file."""
    scenes = load_scenes(path, strict=strict, kind=kind)
    if len(scenes) != 1:
        raise SceneFormatError("schema", f"expected exactly one frame, found {len(scenes)}")
    return scenes[0]


# ---------------------------------------------------------------- map elements

def save_elements(frames: list[tuple[str, list[MapElement]]], path) -> None:
    """frames: list of (frame_id, elements)."""
    doc = {
        "format_version": FORMAT_VERSION,
        "frames": [
            {
                "frame_id": frame_id,
                "map_elements": [
                    {
                        "id": int(e.id),
                        "class": e.cls.value,
                        "points": [[float(v) for v in row] for row in e.points],
                        **({} if e.confidence == 1.0 else {"confidence": float(e.confidence)}),
                    }
                    for e in elements
                ],
            }
            for frame_id, elements in frames
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(canonical_json(doc))


def load_elements(path) -> list[tuple[str, list[MapElement]]]:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise SceneFormatError("malformed-json", f"{path}: {exc}") from exc
    _require(isinstance(doc, dict) and isinstance(doc.get("frames"), list),
             "schema", "element document must carry a frames list")
    out = []
    for frame in doc["frames"]:
        _require(isinstance(frame.get("map_elements"), list), "schema",
                 "frame must carry map_elements")
        elements = []
        for raw in frame["map_elements"]:
            try:
                cls = MapElementClass(raw["class"])
            except (KeyError, ValueError) as exc:
                raise SceneFormatError("schema", f"bad element class: {exc}") from exc
            elements.append(
                MapElement(
                    id=int(raw["id"]),
                    cls=cls,
                    points=np.asarray(raw["points"], dtype=np.float64),
                    confidence=float(raw.get("confidence", 1.0)),
                )
            )
        out.append((frame["frame_id"], elements))
    return out


def is_element_file(path) -> bool:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise SceneFormatError("malformed-json", f"{path}: {exc}") from exc
    frames = doc.get("frames") if isinstance(doc, dict) else None
    if isinstance(frames, list) and frames:
        return "map_elements" in frames[0]
    return False


# ------------------------------------------------------------------- BEV grid

def save_bevgrid(grid: BevGrid, path) -> None:
    header = {
        "H": grid.h, "W": grid.w, "C": grid.c, "dtype": "f64",
        "range": {"x": list(grid.spec.x_range), "y": list(grid.spec.y_range)},
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        f.write(np.ascontiguousarray(grid.data, dtype="<f8").tobytes())


def load_bevgrid(path) -> BevGrid:
    with open(path, "rb") as f:
        header_line = f.readline()
        payload = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SceneFormatError("malformed-json", f"bad grid header: {exc}") from exc
    for key in ("H", "W", "C", "dtype", "range"):
        _require(key in header, "schema", f"grid header missing {key!r}")
    _require(header["dtype"] == "f64", "schema", f"unsupported dtype {header['dtype']!r}")
    h, w, c = int(header["H"]), int(header["W"]), int(header["C"])
    expected = 8 * h * w * c
    _require(len(payload) == expected, "invariant",
             f"grid payload is {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype="<f8").reshape(h, w, c).astype(np.float64)
    spec = GridSpec(
        h=h, w=w,
        x_range=tuple(float(v) for v in header["range"]["x"]),
        y_range=tuple(float(v) for v in header["range"]["y"]),
    )
    return BevGrid(data, spec)


# -------------------------------------------------------------------- reports

_PERCENT_METRICS = ("mAP", "AP_ls", "AP_ped", "AP_div", "TOP_lsls", "TOP_ll",
                    "DET_l", "OLS")


def report_to_document(report: EvalReport) -> dict:
    metrics = {}
    for name, value in report.metrics.items():
        scale = 100.0 if name in _PERCENT_METRICS else 1.0
        metrics[name] = float(value) * scale
    return {
        "task": report.task,
        "frames": report.frames,
        "metrics": metrics,
        "ap_breakdown": {
            name: {t: float(v) * 100.0 for t, v in by_t.items()}
            for name, by_t in report.ap_breakdown.items()
        },
    }


def save_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(canonical_json(report_to_document(report)))


# ------------------------------------------------------------------ rendering

_CLASS_FILL = {LaneClass.LANE_SEGMENT: "#74a9cf", LaneClass.PED_CROSSING: "#df65b0"}
_TYPE_DASH = {
    LineType.SOLID: None,
    LineType.DASHED: "10 7",
    LineType.NON_VISIBLE: "2 6",
}


def _svg_path(points, scale, margin, x_hi, y_hi) -> str:
    cmds = []
    for i, (x, y) in enumerate(points):
        sx = margin + (y_hi - y) * scale
        sy = margin + (x_hi - x) * scale
        cmds.append(f"{'M' if i == 0 else 'L'} {sx:.2f} {sy:.2f}")
    return " ".join(cmds)


def render_svg(scene: Scene, path, scale: float = 8.0, margin: float = 20.0) -> None:
    """Write the scene as SVG: boundaries stroke-styled by line type,
    centerlines with direction arrowheads, successor edges between
    segment endpoints."""
    x_lo, x_hi = scene.x_range
    y_lo, y_hi = scene.y_range
    width = (y_hi - y_lo) * scale + 2 * margin
    height = (x_hi - x_lo) * scale + 2 * margin

    def path_of(line):
        return _svg_path(line[:, :2], scale, margin, x_hi, y_hi)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.2f} {height:.2f}">',
        "<defs>",
        '<marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" '
        'markerWidth="7" markerHeight="7" orient="auto-start-reverse">'
        '<path d="M 0 0 L 10 5 L 0 10 z" fill="#045a8d"/></marker>',
        "</defs>",
        f'<rect width="{width:.2f}" height="{height:.2f}" fill="#fcfcfc"/>',
        f"<!-- frame {escape(scene.frame_id)} -->",
    ]
    for seg in scene.graph.segments:
        fill = _CLASS_FILL[seg.cls]
        outline = np.concatenate(
            [seg.left_boundary.xyz[:, :2], seg.right_boundary.xyz[::-1, :2]]
        )
        parts.append(
            f'<path d="{path_of(outline)} Z" fill="{fill}" fill-opacity="0.18" stroke="none"/>'
        )
        for line, line_type in (
            (seg.left_boundary.xyz, seg.left_type),
            (seg.right_boundary.xyz, seg.right_type),
        ):
            dash = _TYPE_DASH[line_type]
            dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
            parts.append(
                f'<path d="{path_of(line)}" fill="none" stroke="#636363" '
                f'stroke-width="1.6"{dash_attr}/>'
            )
        parts.append(
            f'<path d="{path_of(seg.centerline.xyz)}" fill="none" stroke="#045a8d" '
            f'stroke-width="1.2" marker-end="url(#arrow)"/>'
        )
    adj = scene.graph.adjacency
    for i in range(len(scene.graph.segments)):
        for j in range(len(scene.graph.segments)):
            if i == j or adj[i, j] <= 0.05:
                continue
            a = scene.graph.segments[i].centerline.xyz[-1, :2]
            b = scene.graph.segments[j].centerline.xyz[0, :2]
            parts.append(
                f'<path d="{path_of(np.stack([a, b]))}" fill="none" stroke="#31a354" '
                f'stroke-width="1.0" stroke-opacity="{min(1.0, adj[i, j]):.2f}" '
                'marker-end="url(#arrow)"/>'
            )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")
