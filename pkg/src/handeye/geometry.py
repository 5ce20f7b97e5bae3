"""Planar convex geometry used by the simulator and the geometric baseline.

Polygons are (K, 2) float arrays with counter-clockwise vertex order.
"""

import math

import numpy as np


def wrap_angle(theta):
    """Map an angle (scalar or array) into (-pi, pi]."""
    if np.ndim(theta):
        return math.pi - np.mod(math.pi - np.asarray(theta, dtype=float), 2.0 * math.pi)
    return math.pi - (math.pi - float(theta)) % (2.0 * math.pi)


def rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def polygon_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def ensure_ccw(poly):
    return poly[::-1].copy() if polygon_area(poly) < 0 else poly


def convex_hull(points):
    """Andrew monotone chain; returns CCW hull without repeated endpoint."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float))))
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def polygon_centroid(poly):
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    a = 0.5 * cr.sum()
    return np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6.0 * a)


def rectangle(center, axis_angle, half_u, half_n):
    """Rectangle with half-extent `half_u` along the direction `axis_angle`."""
    u = np.array([math.cos(axis_angle), math.sin(axis_angle)])
    n = np.array([-u[1], u[0]])
    c = np.asarray(center, dtype=float)
    return np.array([
        c - half_u * u - half_n * n,
        c + half_u * u - half_n * n,
        c + half_u * u + half_n * n,
        c - half_u * u + half_n * n,
    ])


def points_in_polygon(poly, pts):
    """Boolean mask of points inside (or on the boundary of) a convex CCW polygon."""
    pts = np.asarray(pts, dtype=float)
    inside = np.ones(pts.shape[:-1], dtype=bool)
    nxt = np.roll(poly, -1, axis=0)
    for a, b in zip(poly, nxt):
        e = b - a
        inside &= e[0] * (pts[..., 1] - a[1]) - e[1] * (pts[..., 0] - a[0]) >= 0.0
    return inside


def _point_segment_distance(p, a, b):
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.linalg.norm(p - (a + t * ab)))


def polygon_signed_distance(poly, p):
    """Exact signed distance from a point to a convex polygon (negative inside)."""
    p = np.asarray(p, dtype=float)
    nxt = np.roll(poly, -1, axis=0)
    d = min(_point_segment_distance(p, a, b) for a, b in zip(poly, nxt))
    return -d if bool(points_in_polygon(poly, p[None])[0]) else d


def _project(poly, axis):
    proj = poly @ axis
    return proj.min(), proj.max()


def polygons_separation(a, b):
    """Largest gap along the SAT axes; positive iff the convex polygons are disjoint."""
    best = -np.inf
    for poly in (a, b):
        nxt = np.roll(poly, -1, axis=0)
        for p, q in zip(poly, nxt):
            e = q - p
            axis = np.array([e[1], -e[0]]) / math.hypot(*e)
            amin, amax = _project(a, axis)
            bmin, bmax = _project(b, axis)
            best = max(best, bmin - amax, amin - bmax)
    return float(best)


def clip_to_slab(poly, normal, lo, hi):
    """Clip a convex polygon to the slab lo <= x.normal <= hi (Sutherland-Hodgman)."""

    def clip(pts, sign, bound):
        out = []
        n = len(pts)
        for i in range(n):
            cur, nxt = pts[i], pts[(i + 1) % n]
            dc = sign * (cur @ normal) - sign * bound
            dn = sign * (nxt @ normal) - sign * bound
            if dc <= 0:
                out.append(cur)
            if dc * dn < 0:
                t = dc / (dc - dn)
                out.append(cur + t * (nxt - cur))
        return out

    pts = list(poly)
    pts = clip(pts, 1.0, hi)
    if not pts:
        return np.zeros((0, 2))
    pts = clip(pts, -1.0, lo)
    return np.array(pts) if pts else np.zeros((0, 2))


def polygon_signed_distances(poly, pts):
    """Vectorized exact signed distance from points (P, 2) to a convex polygon."""
    pts = np.asarray(pts, dtype=float)
    a = poly[None, :, :]
    ab = np.roll(poly, -1, axis=0)[None] - a
    ap = pts[:, None, :] - a
    t = np.clip((ap * ab).sum(-1) / (ab * ab).sum(-1), 0.0, 1.0)
    d = np.linalg.norm(ap - t[..., None] * ab, axis=-1).min(axis=1)
    return np.where(points_in_polygon(poly, pts), -d, d)


def min_along_segment(f, n=65):
    """Minimum over s in [0, 1] of a convex vectorized function f(s_array)."""
    s = np.linspace(0.0, 1.0, n)
    v = f(s)
    k = int(np.argmin(v))
    lo, hi = s[max(k - 1, 0)], s[min(k + 1, n - 1)]
    s2 = np.linspace(lo, hi, n)
    return float(min(v[k], f(s2).min()))
