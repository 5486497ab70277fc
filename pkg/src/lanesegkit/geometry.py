"""Polyline and polygon primitives: resampling, Chamfer and discrete
Frechet distances, polygon rasterization, principal axis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_X_RANGE, DEFAULT_Y_RANGE, Polyline3


@dataclass(frozen=True)
class GridSpec:
    """A metric BEV rectangle discretized into H x W cells.

    Rows (h) run along x, columns (w) along y. The default 200 x 100 grid
    over 100 m x 50 m gives 0.5 m cells. Normalized coordinates map the
    rectangle onto [0, 1]^2 with cell centers at (h + 0.5) / H.
    """

    h: int = 200
    w: int = 100
    x_range: tuple[float, float] = DEFAULT_X_RANGE
    y_range: tuple[float, float] = DEFAULT_Y_RANGE

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ValueError("grid needs at least one cell per axis")
        if self.x_range[1] <= self.x_range[0] or self.y_range[1] <= self.y_range[0]:
            raise ValueError("degenerate grid range")

    @property
    def cell_size(self) -> tuple[float, float]:
        return (
            (self.x_range[1] - self.x_range[0]) / self.h,
            (self.y_range[1] - self.y_range[0]) / self.w,
        )

    def meters_to_normalized(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        nx = (xy[..., 0] - self.x_range[0]) / (self.x_range[1] - self.x_range[0])
        ny = (xy[..., 1] - self.y_range[0]) / (self.y_range[1] - self.y_range[0])
        return np.stack([nx, ny], axis=-1)

    def normalized_to_meters(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        x = self.x_range[0] + p[..., 0] * (self.x_range[1] - self.x_range[0])
        y = self.y_range[0] + p[..., 1] * (self.y_range[1] - self.y_range[0])
        return np.stack([x, y], axis=-1)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Center coordinates in meters: (xs of shape (H,), ys of shape (W,))."""
        dx, dy = self.cell_size
        xs = self.x_range[0] + (np.arange(self.h) + 0.5) * dx
        ys = self.y_range[0] + (np.arange(self.w) + 0.5) * dy
        return xs, ys


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """H x W occupancy grid of {0, 1} tied to its GridSpec."""

    data: np.ndarray
    spec: GridSpec

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.shape != (self.spec.h, self.spec.w):
            raise ValueError(f"mask shape {a.shape} != grid {(self.spec.h, self.spec.w)}")
        if a.size and not np.isin(a, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        a = a.astype(np.uint8).copy()
        a.flags.writeable = False
        object.__setattr__(self, "data", a)


def _as_points(obj) -> np.ndarray:
    a = np.asarray(obj, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"expected a point array, got shape {a.shape}")
    return a


def resample_polyline(poly, n: int) -> Polyline3:
    """Resample to n points at uniform arc-length spacing, endpoints kept
    bit-exact. A zero-length polyline yields n copies of its location."""
    if n < 2:
        raise ValueError("need at least 2 output points")
    pts = np.asarray(poly, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 2:
        raise ValueError("input polyline needs at least 2 points")
    step = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = step.sum()
    if total == 0.0:
        return Polyline3(np.repeat(pts[:1], n, axis=0))
    knots = np.concatenate([[0.0], np.cumsum(step)])
    targets = np.linspace(0.0, total, n)
    out = np.stack([np.interp(targets, knots, pts[:, d]) for d in range(pts.shape[1])], axis=1)
    out[0] = pts[0]
    out[-1] = pts[-1]
    return Polyline3(out)


def point_along(poly, t: float) -> np.ndarray:
    """Point at arc-length parameter t in [0, 1]; degenerate lines collapse."""
    pts = np.asarray(poly, dtype=np.float64)
    step = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = step.sum()
    if total == 0.0:
        return pts[0].copy()
    knots = np.concatenate([[0.0], np.cumsum(step)])
    s = np.clip(t, 0.0, 1.0) * total
    return np.array([np.interp(s, knots, pts[:, d]) for d in range(pts.shape[1])])


def chamfer(a, b) -> float:
    """Symmetric mean nearest-neighbor distance between two point sets,
    Euclidean in however many dimensions the inputs carry."""
    pa, pb = _as_points(a), _as_points(b)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise ValueError("chamfer of an empty point set")
    d = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
    return float(0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean()))


def frechet_discrete(p, q) -> float:
    """Discrete Frechet distance by the standard coupling recursion.

    ca[i, j] = max(|P_i - Q_j|, min(ca[i-1, j], ca[i-1, j-1], ca[i, j-1])),
    i.e. the cheapest monotone walk over index pairs that starts and ends
    at matched endpoints. Direction-sensitive.
    """
    pp, qq = _as_points(p), _as_points(q)
    if pp.shape[0] == 0 or qq.shape[0] == 0:
        raise ValueError("frechet of an empty polyline")
    d = np.linalg.norm(pp[:, None, :] - qq[None, :, :], axis=2)
    n, m = d.shape
    ca = np.empty((n, m))
    ca[0, 0] = d[0, 0]
    for j in range(1, m):
        ca[0, j] = max(ca[0, j - 1], d[0, j])
    for i in range(1, n):
        ca[i, 0] = max(ca[i - 1, 0], d[i, 0])
        for j in range(1, m):
            ca[i, j] = max(min(ca[i - 1, j], ca[i - 1, j - 1], ca[i, j - 1]), d[i, j])
    return float(ca[n - 1, m - 1])


def _point_on_edges(px, py, poly, eps=1e-9) -> np.ndarray:
    """Boolean mask of query points lying on any polygon edge (within eps)."""
    on = np.zeros(px.shape, dtype=bool)
    nv = len(poly)
    for k in range(nv):
        x1, y1 = poly[k]
        x2, y2 = poly[(k + 1) % nv]
        ex, ey = x2 - x1, y2 - y1
        L2 = ex * ex + ey * ey
        if L2 == 0.0:
            d2 = (px - x1) ** 2 + (py - y1) ** 2
        else:
            t = np.clip(((px - x1) * ex + (py - y1) * ey) / L2, 0.0, 1.0)
            d2 = (px - (x1 + t * ex)) ** 2 + (py - (y1 + t * ey)) ** 2
        on |= d2 <= eps * eps
    return on


def rasterize_polygon(polygon, grid: GridSpec) -> BinaryMask:
    """Even-odd rasterization: a cell is set iff its center lies inside the
    polygon; centers on the boundary count as inside. Fewer than 3 distinct
    vertices yields an all-zero mask."""
    poly = np.asarray(polygon, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[1] < 2:
        mask = np.zeros((grid.h, grid.w), dtype=np.uint8)
        return BinaryMask(mask, grid)
    poly = poly[:, :2]
    if len(np.unique(poly.round(12), axis=0)) < 3:
        return BinaryMask(np.zeros((grid.h, grid.w), dtype=np.uint8), grid)

    xs, ys = grid.cell_centers()
    px = np.repeat(xs, grid.w).reshape(grid.h, grid.w)
    py = np.tile(ys, grid.h).reshape(grid.h, grid.w)

    inside = np.zeros((grid.h, grid.w), dtype=bool)
    nv = len(poly)
    for k in range(nv):
        x1, y1 = poly[k]
        x2, y2 = poly[(k + 1) % nv]
        if y1 == y2:
            continue
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(invalid="ignore", divide="ignore"):
            x_at = (x2 - x1) * (py - y1) / (y2 - y1) + x1
        inside ^= crosses & (px < x_at)

    inside |= _point_on_edges(px, py, poly)
    return BinaryMask(inside.astype(np.uint8), grid)


def principal_axis(polygon) -> np.ndarray:
    """Unit direction of largest vertex-covariance eigenvalue, in (x, y).

    Sign is only locally canonical (x >= 0, then y >= 0); scene-level
    orientation is applied by the preprocessing step. Near-isotropic vertex
    clouds (eigenvalue gap below 1e-9) fall back to +x.
    """
    pts = np.asarray(polygon, dtype=np.float64)[:, :2]
    if len(pts) < 3:
        raise ValueError("principal axis needs at least 3 vertices")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    if abs(evals[1] - evals[0]) <= 1e-9 * max(1.0, abs(evals[1])):
        return np.array([1.0, 0.0])
    d = evecs[:, 1]
    if d[0] < 0 or (d[0] == 0 and d[1] < 0):
        d = -d
    return d / np.linalg.norm(d)
