"""Polygon measures, convex clipping and least-squares curve fitting."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .core.types import Quadrilateral

PolygonLike = Union[Quadrilateral, np.ndarray, Sequence[Sequence[float]]]

_EPS = 1e-12


class NonConvexPolygonError(ValueError):
    pass


def as_points(poly: PolygonLike) -> np.ndarray:
    if isinstance(poly, Quadrilateral):
        return np.asarray(poly.corners, dtype=float)
    pts = np.asarray(poly, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) point array, got shape {pts.shape}")
    return pts


def _next(a: np.ndarray) -> np.ndarray:
    return np.concatenate([a[1:], a[:1]])


def signed_area(poly: PolygonLike) -> float:
    pts = as_points(poly)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, _next(y)) - np.dot(y, _next(x)))


def polygon_area(poly: PolygonLike) -> float:
    """Shoelace area of a simple polygon."""
    pts = as_points(poly)
    if len(pts) < 3:
        raise ValueError("a polygon needs at least 3 points")
    return abs(signed_area(pts))


def is_convex(poly: PolygonLike) -> bool:
    """True for convex polygons with positive area (collinear vertices allowed)."""
    pts = as_points(poly)
    if len(pts) < 3 or polygon_area(pts) <= _EPS:
        return False
    edges = _next(pts) - pts
    cross = edges[:, 0] * _next(edges[:, 1]) - edges[:, 1] * _next(edges[:, 0])
    scale = np.abs(edges).max() ** 2
    tol = 1e-12 * scale
    if np.any(cross > tol) and np.any(cross < -tol):
        return False
    # a convex polygon winds around exactly once
    angles = np.arctan2(edges[:, 1], edges[:, 0])
    turn = np.angle(np.exp(1j * (_next(angles) - angles)))
    return bool(abs(abs(turn.sum()) - 2 * np.pi) < 1e-6)


def point_in_polygon(p: Sequence[float], poly: PolygonLike) -> bool:
    """Even-odd test; points on the boundary count as inside."""
    pts = as_points(poly)
    px, py = float(p[0]), float(p[1])
    n = len(pts)
    scale = max(1.0, float(np.abs(pts).max()))
    inside = False
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        # boundary check
        cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        if abs(cross) <= 1e-9 * scale * scale:
            if min(x1, x2) - 1e-9 <= px <= max(x1, x2) + 1e-9 and min(y1, y2) - 1e-9 <= py <= max(y1, y2) + 1e-9:
                return True
        if (y1 > py) != (y2 > py):
            x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < x_cross:
                inside = not inside
    return inside


def _ccw(pts: np.ndarray) -> np.ndarray:
    return pts if signed_area(pts) > 0 else pts[::-1]


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by the convex ``clip``.

    Both polygons must be counter-clockwise in the (x, y) frame.
    """
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        a = clip[i]
        b = clip[(i + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]

        def side(p):
            return ex * (p[1] - a[1]) - ey * (p[0] - a[0])

        inputs, output = output, []
        prev = inputs[-1]
        prev_side = side(prev)
        for cur in inputs:
            cur_side = side(cur)
            if cur_side >= 0:
                if prev_side < 0:
                    output.append(_intersect(prev, cur, prev_side, cur_side))
                output.append(cur)
            elif prev_side >= 0:
                output.append(_intersect(prev, cur, prev_side, cur_side))
            prev, prev_side = cur, cur_side
    return np.array(output, dtype=float).reshape(-1, 2)


def _intersect(p, q, sp: float, sq: float) -> tuple[float, float]:
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def intersection_area(a: PolygonLike, b: PolygonLike) -> float:
    pa, pb = as_points(a), as_points(b)
    for name, pts in (("first", pa), ("second", pb)):
        if not is_convex(pts):
            raise NonConvexPolygonError(f"{name} polygon is not convex: {pts.tolist()}")
    inter = clip_convex(_ccw(pa), _ccw(pb))
    if len(inter) < 3:
        return 0.0
    return abs(signed_area(inter))


def polygon_iou(a: PolygonLike, b: PolygonLike) -> float:
    """Intersection over union of two convex polygons."""
    inter = intersection_area(a, b)
    union = polygon_area(a) + polygon_area(b) - inter
    if union <= 0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


@dataclass(frozen=True, eq=False)
class Polynomial:
    """x = f(y), stored in the normalised variable t = (y - center) / scale."""

    coefficients: np.ndarray  # c_0 .. c_d in t
    center: float = 0.0
    scale: float = 1.0

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, y):
        return np.polynomial.polynomial.polyval((np.asarray(y, dtype=float) - self.center) / self.scale, self.coefficients)

    def derivative(self, y, order: int = 1):
        dc = np.polynomial.polynomial.polyder(self.coefficients, order)
        t = (np.asarray(y, dtype=float) - self.center) / self.scale
        return np.polynomial.polynomial.polyval(t, dc) / self.scale**order

    def raw_coefficients(self) -> np.ndarray:
        """Coefficients in powers of y itself (poorly conditioned for large y)."""
        # substitute t = (y - center) / scale
        shift = np.array([-self.center / self.scale, 1.0 / self.scale])
        out = np.zeros(1)
        power = np.ones(1)
        for c in self.coefficients:
            out = np.polynomial.polynomial.polyadd(out, c * power)
            power = np.polynomial.polynomial.polymul(power, shift)
        return np.pad(out, (0, self.degree + 1 - len(out)))


def fit_polynomial(points: Sequence[Sequence[float]], degree: int) -> Polynomial:
    """Least-squares fit x = f(y) through (y, x) points via QR on a scaled basis."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    y, x = pts[:, 0], pts[:, 1]
    if degree < 0:
        raise ValueError("degree must be non-negative")
    if len(pts) < degree + 1:
        raise ValueError(f"degree {degree} fit needs {degree + 1} points, got {len(pts)}")
    if len(np.unique(y)) < degree + 1:
        raise np.linalg.LinAlgError(f"rank-deficient fit: only {len(np.unique(y))} distinct y values")
    center = float((y.max() + y.min()) / 2)
    scale = float((y.max() - y.min()) / 2) or 1.0
    t = (y - center) / scale
    vander = np.vander(t, degree + 1, increasing=True)
    q, r = np.linalg.qr(vander)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-12 * diag.max():
        raise np.linalg.LinAlgError("rank-deficient fit")
    coef = np.linalg.solve(r, q.T @ x)
    return Polynomial(coef, center, scale)


def fit_residual(poly: Polynomial, points: Sequence[Sequence[float]]) -> float:
    """Root-mean-square residual of the fit."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return float(np.sqrt(np.mean((poly(pts[:, 0]) - pts[:, 1]) ** 2)))


def curvature(poly: Polynomial, y) -> np.ndarray:
    d1 = poly.derivative(y, 1)
    d2 = poly.derivative(y, 2)
    return np.abs(d2) / (1.0 + d1**2) ** 1.5


def max_abs_curvature(poly: Polynomial, y_range: tuple[float, float], samples_per_px: float = 1.0) -> float:
    lo, hi = float(y_range[0]), float(y_range[1])
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        raise ValueError(f"empty or invalid y range {y_range}")
    n = max(2, int(np.ceil((hi - lo) * samples_per_px)) + 1)
    ys = np.linspace(lo, hi, n)
    return float(curvature(poly, ys).max())


def max_centreline_deviation(points: Sequence[Sequence[float]]) -> float:
    """Largest lateral distance of (y, x) points from the vertical line x = mean(x)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise ValueError("need at least two points")
    x = pts[:, 1]
    return float(np.abs(x - x.mean()).max())
