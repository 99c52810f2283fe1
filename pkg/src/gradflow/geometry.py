"""Convex planar geometry: areas, clipping, overlaps, and segment tests.

All polygons are (k, 2) float arrays with vertices in counter-clockwise
order.  Routines assume convexity and do not re-check it; callers own that
invariant.  Everything here is pure and allocation-light so it can sit in
inner loops of mesh construction and overlap integration.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def polygon_area(verts: np.ndarray) -> float:
    """Signed shoelace area (positive for counter-clockwise order)."""
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_centroid(verts: np.ndarray) -> np.ndarray:
    x, y = verts[:, 0], verts[:, 1]
    cross = x * np.roll(y, -1) - np.roll(x, -1) * y
    a = 0.5 * np.sum(cross)
    if abs(a) < 1e-300:
        return verts.mean(axis=0)
    cx = float(np.sum((x + np.roll(x, -1)) * cross)) / (6.0 * a)
    cy = float(np.sum((y + np.roll(y, -1)) * cross)) / (6.0 * a)
    return np.array([cx, cy])


def polygon_diameter(verts: np.ndarray) -> float:
    # max vertex-to-vertex distance; for convex polygons this is the diameter
    d = verts[:, None, :] - verts[None, :, :]
    return float(np.sqrt((d * d).sum(-1)).max())


def ensure_ccw(verts: np.ndarray) -> np.ndarray:
    return verts if polygon_area(verts) >= 0.0 else verts[::-1].copy()


def merge_close_vertices(verts: np.ndarray, tol: float) -> np.ndarray:
    """Drop consecutive vertices closer than tol (wrapping around)."""
    if len(verts) == 0:
        return verts.reshape(0, 2)
    kept = [verts[0]]
    for v in verts[1:]:
        if np.hypot(v[0] - kept[-1][0], v[1] - kept[-1][1]) > tol:
            kept.append(v)
    if len(kept) > 1 and np.hypot(*(kept[0] - kept[-1])) <= tol:
        kept.pop()
    return np.asarray(kept, dtype=float).reshape(-1, 2)


def clip_halfplane(verts: np.ndarray, normal: np.ndarray, offset: float,
                   merge_tol: float = 1e-12) -> np.ndarray:
    """Intersect a convex polygon with the half-plane {x : normal·x <= offset}."""
    if len(verts) == 0:
        return verts
    s = verts @ normal - offset
    out: list[np.ndarray] = []
    k = len(verts)
    for i in range(k):
        j = (i + 1) % k
        if s[i] <= 0.0:
            out.append(verts[i])
        if (s[i] <= 0.0) != (s[j] <= 0.0):
            t = s[i] / (s[i] - s[j])
            out.append(verts[i] + t * (verts[j] - verts[i]))
    return merge_close_vertices(np.asarray(out, dtype=float).reshape(-1, 2), merge_tol)


def clip_convex(subject: np.ndarray, clipper: np.ndarray,
                merge_tol: float = 1e-12) -> np.ndarray:
    """Intersection of two convex polygons by sequential half-plane clipping."""
    out = subject
    k = len(clipper)
    for i in range(k):
        if len(out) == 0:
            break
        a = clipper[i]
        e = clipper[(i + 1) % k] - a
        normal = np.array([e[1], -e[0]])  # outward for ccw clipper
        out = clip_halfplane(out, normal, float(normal @ a), merge_tol)
    return out


def signed_edge_distances(verts: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Distance of p to each edge's supporting line, positive on the inside."""
    a = verts
    b = np.roll(verts, -1, axis=0)
    ex, ey = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    ln = np.hypot(ex, ey)
    ln[ln == 0.0] = 1.0
    return (ex * (p[1] - a[:, 1]) - ey * (p[0] - a[:, 0])) / ln


def point_in_convex(verts: np.ndarray, p: np.ndarray, tol: float = 1e-9) -> bool:
    return bool(np.all(signed_edge_distances(verts, p) >= -tol))


def inradius_from(verts: np.ndarray, p: np.ndarray) -> float:
    """Radius of the largest ball centred at p inside the convex polygon."""
    return max(float(signed_edge_distances(verts, p).min()), 0.0)


def line_section(verts: np.ndarray, normal: np.ndarray, offset: float,
                 tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray] | None:
    """Segment cut out of a convex polygon by the line {normal·x = offset}.

    Returns the two endpoints (ordered along the line) or None when the
    intersection is empty or a single point.  `normal` need not be unit.
    """
    nn = float(np.hypot(normal[0], normal[1]))
    if nn == 0.0:
        return None
    unit = normal / nn
    s = verts @ unit - offset / nn
    pts: list[np.ndarray] = []
    k = len(verts)
    for i in range(k):
        j = (i + 1) % k
        si, sj = s[i], s[j]
        if abs(si) <= tol:
            pts.append(verts[i])
        elif (si < -tol and sj > tol) or (si > tol and sj < -tol):
            t = si / (si - sj)
            pts.append(verts[i] + t * (verts[j] - verts[i]))
    if len(pts) < 2:
        return None
    direction = np.array([-unit[1], unit[0]])
    proj = np.array([float(p @ direction) for p in pts])
    p0 = pts[int(np.argmin(proj))]
    p1 = pts[int(np.argmax(proj))]
    if np.hypot(p1[0] - p0[0], p1[1] - p0[1]) <= tol:
        return None
    return p0, p1


def segment_params(p: np.ndarray, q: np.ndarray, a: np.ndarray,
                   b: np.ndarray) -> tuple[float, float] | None:
    """Parameters (t, u) with p + t(q-p) = a + u(b-a), or None if parallel."""
    d1 = q - p
    d2 = b - a
    den = d1[0] * d2[1] - d1[1] * d2[0]
    scale = (abs(d1[0]) + abs(d1[1])) * (abs(d2[0]) + abs(d2[1]))
    if abs(den) <= 1e-14 * max(scale, 1e-300):
        return None
    r = a - p
    t = (r[0] * d2[1] - r[1] * d2[0]) / den
    u = (r[0] * d1[1] - r[1] * d1[0]) / den
    return float(t), float(u)


def shared_edge(pa: np.ndarray, pb: np.ndarray,
                tol: float) -> tuple[np.ndarray, np.ndarray] | None:
    """Common boundary segment of two adjacent convex polygons, or None.

    Looks for a pair of collinear, overlapping edges; returns the longest
    overlap.  Used to reconstruct face geometry after mesh file round-trips.
    """
    best: tuple[np.ndarray, np.ndarray] | None = None
    best_len = tol
    ka, kb = len(pa), len(pb)
    for i in range(ka):
        a0, a1 = pa[i], pa[(i + 1) % ka]
        e = a1 - a0
        el = float(np.hypot(e[0], e[1]))
        if el <= tol:
            continue
        u = e / el
        n = np.array([-u[1], u[0]])
        for j in range(kb):
            b0, b1 = pb[j], pb[(j + 1) % kb]
            if abs(float(n @ (b0 - a0))) > tol or abs(float(n @ (b1 - a0))) > tol:
                continue
            s0, s1 = float(u @ (b0 - a0)), float(u @ (b1 - a0))
            lo, hi = max(0.0, min(s0, s1)), min(el, max(s0, s1))
            if hi - lo > best_len:
                best_len = hi - lo
                best = (a0 + lo * u, a0 + hi * u)
    return best


def inset_convex(verts: np.ndarray, delta: float,
                 merge_tol: float = 1e-12) -> np.ndarray:
    """Shrink a convex polygon by moving every edge inward by delta."""
    out = verts
    k = len(verts)
    for i in range(k):
        if len(out) == 0:
            break
        a = verts[i]
        e = verts[(i + 1) % k] - a
        el = float(np.hypot(e[0], e[1]))
        if el == 0.0:
            continue
        normal = np.array([e[1], -e[0]]) / el  # outward unit
        out = clip_halfplane(out, normal, float(normal @ a) - delta, merge_tol)
    return out


@dataclass(frozen=True)
class Box:
    """Open axis-aligned box; the 'cube' used for localization and scans."""

    lo: np.ndarray
    hi: np.ndarray

    @staticmethod
    def from_center(center, side: float) -> "Box":
        c = np.atleast_1d(np.asarray(center, dtype=float))
        h = 0.5 * float(side)
        return Box(c - h, c + h)

    @staticmethod
    def coerce(region) -> "Box":
        if isinstance(region, Box):
            return region
        arr = np.asarray(region, dtype=float).ravel()
        if arr.size == 2:
            return Box(np.array([arr[0]]), np.array([arr[1]]))
        if arr.size == 4:
            return Box(np.array([arr[0], arr[1]]), np.array([arr[2], arr[3]]))
        raise ValueError("region must be (a, b) or (x0, y0, x1, y1)")

    @property
    def dim(self) -> int:
        return int(self.lo.size)

    def as_polygon(self) -> np.ndarray:
        (x0, y0), (x1, y1) = self.lo, self.hi
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    def measure(self) -> float:
        return float(np.prod(np.maximum(self.hi - self.lo, 0.0)))

    def expanded(self, delta: float) -> "Box":
        return Box(self.lo - delta, self.hi + delta)
