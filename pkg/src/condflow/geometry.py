"""Axis-aligned boxes, deterministic sample plans, and small polygon utilities.

Everything here is plain numpy plus exact 2D predicates used by the cone-fan
code. Polygons are convex, stored as (n, 2) vertex arrays in counterclockwise
order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo_1, hi_1] x ... x [lo_d, hi_d]."""

    lo: np.ndarray
    hi: np.ndarray

    def __init__(self, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if np.any(hi <= lo):
            raise ValueError("box must have positive extent in every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dimension(self) -> int:
        return self.lo.size

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def signed_inset(self, x) -> float:
        """Distance to the boundary along the nearest axis, positive inside."""
        x = np.asarray(x, dtype=float)
        return float(min(np.min(x - self.lo), np.min(self.hi - x)))

    def inflate(self, margin: float) -> "Box":
        return Box(self.lo - margin, self.hi + margin)

    def lattice(self, count: int) -> np.ndarray:
        """Deterministic low-discrepancy plan of `count` points in the box.

        Kronecker lattice driven by the d-dimensional golden ratio, so the
        plan is reproducible and fills the box evenly. Returns (count, d).
        """
        return kronecker_lattice(count, self.dimension) * self.widths + self.lo

    def grid(self, shape) -> np.ndarray:
        """Regular vertex grid with `shape[i]` points along axis i, flattened to (N, d)."""
        axes = [np.linspace(self.lo[i], self.hi[i], int(shape[i])) for i in range(self.dimension)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


def kronecker_lattice(count: int, dimension: int) -> np.ndarray:
    """Points k * alpha mod 1 for the generalized golden ratio alpha."""
    # alpha_i = 1/phi_d^(i+1) where phi_d solves x^(d+1) = x + 1
    phi = 2.0
    for _ in range(64):
        phi = (1.0 + phi) ** (1.0 / (dimension + 1))
    alpha = np.array([phi ** -(i + 1) for i in range(dimension)])
    k = np.arange(1, count + 1)[:, None]
    return np.mod(0.5 + k * alpha[None, :], 1.0)


# ---------------------------------------------------------------------------
# 2D polygon helpers (convex, counterclockwise)


def polygon_area(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def ensure_ccw(vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    if polygon_area(v) < 0:
        return v[::-1].copy()
    return v


def point_in_convex_polygon(point, vertices, tol: float = 1e-12) -> bool:
    v = np.asarray(vertices, dtype=float)
    p = np.asarray(point, dtype=float)
    n = len(v)
    scale = 1.0 + float(np.max(np.abs(v)))
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        if cross < -tol * scale:
            return False
    return True


def clip_convex(subject, lo, hi) -> np.ndarray:
    """Clip a convex CCW polygon against the box [lo, hi]. Returns (m, 2), possibly empty."""
    poly = [tuple(map(float, p)) for p in subject]

    def clip_half(points, axis, bound, keep_below):
        out = []
        n = len(points)
        for i in range(n):
            cur, nxt = points[i], points[(i + 1) % n]
            cin = cur[axis] <= bound if keep_below else cur[axis] >= bound
            nin = nxt[axis] <= bound if keep_below else nxt[axis] >= bound
            if cin:
                out.append(cur)
            if cin != nin:
                t = (bound - cur[axis]) / (nxt[axis] - cur[axis])
                out.append(
                    (
                        cur[0] + t * (nxt[0] - cur[0]),
                        cur[1] + t * (nxt[1] - cur[1]),
                    )
                )
        return out

    for axis in (0, 1):
        if not poly:
            break
        poly = clip_half(poly, axis, float(hi[axis]), True)
        if not poly:
            break
        poly = clip_half(poly, axis, float(lo[axis]), False)
    return np.array(poly, dtype=float).reshape(-1, 2)


def triangulate_fan(vertices):
    """Split a convex CCW polygon into triangles around its centroid."""
    v = np.asarray(vertices, dtype=float)
    if len(v) < 3:
        return []
    c = v.mean(axis=0)
    return [(c, v[i], v[(i + 1) % len(v)]) for i in range(len(v))]


_TRI_CACHE: dict = {}


def triangle_rule(order: int):
    """Tensor Gauss rule collapsed onto the reference triangle (Duffy map).

    Returns (points, weights) on the triangle (0,0), (1,0), (0,1); weights sum
    to its area 1/2. Cached per order.
    """
    if order in _TRI_CACHE:
        return _TRI_CACHE[order]
    g, w = np.polynomial.legendre.leggauss(order)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    uu, vv = np.meshgrid(g, g, indexing="ij")
    ww = np.outer(w, w)
    # Duffy: (u, v) -> (u, v*(1-u)) with Jacobian (1-u)
    pts = np.stack([uu.ravel(), (vv * (1.0 - uu)).ravel()], axis=-1)
    wts = (ww * (1.0 - uu)).ravel()
    _TRI_CACHE[order] = (pts, wts)
    return pts, wts


def triangle_quadrature(a, b, c, order: int):
    """Quadrature points and weights for the physical triangle (a, b, c)."""
    ref, wref = triangle_rule(order)
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    c = np.asarray(c, float)
    jac = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    pts = a[None, :] + ref[:, 0:1] * (b - a)[None, :] + ref[:, 1:2] * (c - a)[None, :]
    return pts, wref * jac


def convex_polygon_quadrature(vertices, order: int):
    """Gauss quadrature over a convex polygon via centroid triangulation."""
    pts_all, wts_all = [], []
    for a, b, c in triangulate_fan(vertices):
        p, w = triangle_quadrature(a, b, c, order)
        pts_all.append(p)
        wts_all.append(w)
    if not pts_all:
        return np.zeros((0, 2)), np.zeros(0)
    return np.concatenate(pts_all), np.concatenate(wts_all)


def segment_gauss(a, b, order: int):
    """Gauss points and weights on the segment from a to b (any dimension)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    g, w = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (g + 1.0)
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    length = float(np.linalg.norm(b - a))
    return pts, 0.5 * w * length
