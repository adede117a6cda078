"""Quadrature rules shared by assembly and error evaluation.

Triangle rule of polynomial degree 4 (six points), polygon rules by fan
splitting around the centroid, and Gauss rules on segments.
"""

from __future__ import annotations

import numpy as np

# degree-4 six-point symmetric triangle rule; barycentric coordinates and
# weights normalized to sum 1 (multiply by triangle area)
_TRI4_W = np.array(
    [0.223381589678011] * 3 + [0.109951743655322] * 3
)
_TRI4_B = np.array(
    [
        [0.108103018168070, 0.445948490915965, 0.445948490915965],
        [0.445948490915965, 0.108103018168070, 0.445948490915965],
        [0.445948490915965, 0.445948490915965, 0.108103018168070],
        [0.816847572980459, 0.091576213509771, 0.091576213509771],
        [0.091576213509771, 0.816847572980459, 0.091576213509771],
        [0.091576213509771, 0.091576213509771, 0.816847572980459],
    ]
)

_GAUSS2_T = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_GAUSS2_W = np.array([0.5, 0.5])


def triangle_rule(a, b, c):
    """(points, weights) on one triangle; weights sum to its area."""
    verts = np.array([a, b, c], float)
    pts = _TRI4_B @ verts
    area = 0.5 * abs(
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    )
    return pts, _TRI4_W * area


def polygon_rule(verts):
    """(points, weights) on a polygon, fanned around the centroid.

    Exact through degree 4 on each fan triangle; works for any simple
    CCW polygon whose centroid sees every edge (all our cells do, being
    cut or glued from triangles of one convex fracture).
    """
    verts = np.asarray(verts, float)
    if len(verts) == 3:
        return triangle_rule(verts[0], verts[1], verts[2])
    x, y = verts[:, 0], verts[:, 1]
    cr = x * np.roll(y, -1) - np.roll(x, -1) * y
    a = 0.5 * np.sum(cr)
    cx = np.sum((x + np.roll(x, -1)) * cr) / (6.0 * a)
    cy = np.sum((y + np.roll(y, -1)) * cr) / (6.0 * a)
    c = np.array([cx, cy])
    pts, wts = [], []
    n = len(verts)
    for k in range(n):
        p, w = triangle_rule(verts[k], verts[(k + 1) % n], c)
        pts.append(p)
        wts.append(w)
    return np.vstack(pts), np.concatenate(wts)


def segment_rule(a, b):
    """Two-point Gauss rule on segment a-b; weights sum to its length."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    pts = a + _GAUSS2_T[:, None] * (b - a)
    return pts, _GAUSS2_W * np.linalg.norm(b - a)
