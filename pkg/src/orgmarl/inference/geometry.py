"""Planar convex hulls for checking how PCA scatter points group."""

from __future__ import annotations

from typing import Sequence

Point = tuple[float, float]


def _cross(o: Point, a: Point, b: Point) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Sequence[Point]) -> list[Point]:
    """Counter-clockwise hull by Andrew's monotone chain (collinear points dropped)."""
    pts = sorted(set((float(x), float(y)) for x, y in points))
    if len(pts) <= 2:
        return pts
    lower: list[Point] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def _on_segment(p: Point, a: Point, b: Point, tol: float) -> bool:
    dx, dy = b[0] - a[0], b[1] - a[1]
    length2 = dx * dx + dy * dy
    if length2 == 0:
        return (p[0] - a[0]) ** 2 + (p[1] - a[1]) ** 2 <= tol * tol
    t = max(0.0, min(1.0, ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / length2))
    qx, qy = a[0] + t * dx, a[1] + t * dy
    return (p[0] - qx) ** 2 + (p[1] - qy) ** 2 <= tol * tol


def in_hull(point: Point, hull: Sequence[Point], tol: float = 1e-9) -> bool:
    """Whether `point` lies inside or on the boundary of a hull from `convex_hull`."""
    if not hull:
        return False
    if len(hull) == 1:
        return _on_segment(point, hull[0], hull[0], tol)
    if len(hull) == 2:
        return _on_segment(point, hull[0], hull[1], tol)
    for i in range(len(hull)):
        a, b = hull[i], hull[(i + 1) % len(hull)]
        if _cross(a, b, point) < -tol and not _on_segment(point, a, b, tol):
            return False
    return True


def hull_coverage(points: Sequence[Point], members: Sequence[int]) -> float:
    """Share of all `points` inside the hull of the points indexed by `members`."""
    if len(points) == 0:
        return 0.0
    hull = convex_hull([points[i] for i in members])
    return sum(in_hull(p, hull) for p in points) / len(points)
