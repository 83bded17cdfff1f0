"""Planar geometry predicates on projected (metre) coordinates, vectorised over points."""
from __future__ import annotations

import numpy as np

EDGE_TOL = 1e-9


def ring_area(ring) -> float:
    """Unsigned shoelace area of a closed ring given as an ``(k, 2)`` array."""
    ring = np.asarray(ring, dtype=float)
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * abs(float(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1])))


def polygon_area(exterior, holes=()) -> float:
    return max(ring_area(exterior) - sum(ring_area(h) for h in holes), 0.0)


def is_valid_ring(ring) -> bool:
    ring = np.asarray(ring, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2 or len(ring) < 4:
        return False
    if not np.all(np.isfinite(ring)):
        return False
    return bool(np.all(ring[0] == ring[-1]))


def _ring_status(px, py, ring):
    """Winding numbers and on-boundary flags of points against a closed ring."""
    x0 = ring[:-1, 0][None, :]
    y0 = ring[:-1, 1][None, :]
    x1 = ring[1:, 0][None, :]
    y1 = ring[1:, 1][None, :]
    px = px[:, None]
    py = py[:, None]
    cross = (x1 - x0) * (py - y0) - (px - x0) * (y1 - y0)
    up = (y0 <= py) & (y1 > py) & (cross > 0)
    down = (y0 > py) & (y1 <= py) & (cross < 0)
    winding = up.sum(axis=1) - down.sum(axis=1)
    seg_len = np.hypot(x1 - x0, y1 - y0)
    on_line = np.abs(cross) <= EDGE_TOL * np.maximum(seg_len, 1.0)
    in_span = (
        (px >= np.minimum(x0, x1) - EDGE_TOL)
        & (px <= np.maximum(x0, x1) + EDGE_TOL)
        & (py >= np.minimum(y0, y1) - EDGE_TOL)
        & (py <= np.maximum(y0, y1) + EDGE_TOL)
    )
    on_edge = (on_line & in_span).any(axis=1)
    return winding, on_edge


def points_in_polygon(px, py, exterior, holes=(), chunk: int = 4096) -> np.ndarray:
    """Boolean mask of points inside a polygon; the boundary counts as inside.

    Uses the non-zero winding rule. A point on a hole's boundary is inside.
    """
    px = np.atleast_1d(np.asarray(px, dtype=float))
    py = np.atleast_1d(np.asarray(py, dtype=float))
    exterior = np.asarray(exterior, dtype=float)
    out = np.zeros(len(px), dtype=bool)
    for s in range(0, len(px), chunk):
        xs, ys = px[s : s + chunk], py[s : s + chunk]
        wn, edge = _ring_status(xs, ys, exterior)
        inside = (wn != 0) | edge
        for hole in holes:
            hwn, hedge = _ring_status(xs, ys, np.asarray(hole, dtype=float))
            inside &= ~((hwn != 0) & ~hedge)
        out[s : s + chunk] = inside
    return out


def segments_hit_boxes(ax, ay, bx, by, cx, cy, half) -> np.ndarray:
    """Whether segments ``a->b`` intersect axis-aligned squares ``center +- half``.

    Liang-Barsky clipping with closed boxes; all arguments broadcast.
    """
    ax, ay, bx, by, cx, cy, half = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (ax, ay, bx, by, cx, cy, half))
    )
    dx = bx - ax
    dy = by - ay
    t0 = np.zeros(ax.shape)
    t1 = np.ones(ax.shape)
    ok = np.ones(ax.shape, dtype=bool)
    for p, q in (
        (-dx, ax - (cx - half)),
        (dx, (cx + half) - ax),
        (-dy, ay - (cy - half)),
        (dy, (cy + half) - ay),
    ):
        zero = p == 0
        ok &= ~(zero & (q < 0))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            r = q / np.where(zero, 1.0, p)
        t0 = np.where(~zero & (p < 0), np.maximum(t0, r), t0)
        t1 = np.where(~zero & (p > 0), np.minimum(t1, r), t1)
    return ok & (t0 <= t1)


def polyline_hits_boxes(polyline, cx, cy, half, chunk: int = 4096) -> np.ndarray:
    """Whether a polyline touches the square of half-side ``half`` around each point."""
    line = np.asarray(polyline, dtype=float)
    cx = np.atleast_1d(np.asarray(cx, dtype=float))
    cy = np.atleast_1d(np.asarray(cy, dtype=float))
    out = np.zeros(len(cx), dtype=bool)
    a, b = line[:-1], line[1:]
    for s in range(0, len(cx), chunk):
        hits = segments_hit_boxes(
            a[None, :, 0], a[None, :, 1], b[None, :, 0], b[None, :, 1],
            cx[s : s + chunk, None], cy[s : s + chunk, None], half,
        )
        out[s : s + chunk] = hits.any(axis=1)
    return out
