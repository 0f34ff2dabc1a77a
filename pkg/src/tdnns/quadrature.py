"""Quadrature rules on reference simplices and their facets.

Rules on the unit triangle/tetrahedron are generated from collapsed
(Duffy) tensor products of Gauss-Jacobi rules, which are exact for
polynomials up to the requested degree.  Weights sum to the reference
simplex volume (1/2 in 2D, 1/6 in 3D).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def gauss_01(n):
    """n-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def simplex_rule(dim, degree):
    """Quadrature rule exact for polynomials of total degree ``degree``.

    Returns (points, weights) with points in reference coordinates of the
    unit simplex spanned by the origin and the unit vectors.
    """
    n = degree // 2 + 1
    if dim == 1:
        return gauss_01(n)
    if dim == 2:
        xa, wa = roots_jacobi(n, 1.0, 0.0)
        xb, wb = np.polynomial.legendre.leggauss(n)
        xa, wa = 0.5 * (xa + 1.0), wa / 4.0
        xb, wb = 0.5 * (xb + 1.0), 0.5 * wb
        pts, wts = [], []
        for a, w1 in zip(xa, wa):
            for b, w2 in zip(xb, wb):
                # Duffy map: (a, b) in [0,1]^2 -> (x, y) in triangle.
                pts.append((a, b * (1.0 - a)))
                wts.append(w1 * w2)
        return np.array(pts), np.array(wts)
    if dim == 3:
        xa, wa = roots_jacobi(n, 2.0, 0.0)
        xb, wb = roots_jacobi(n, 1.0, 0.0)
        xc, wc = np.polynomial.legendre.leggauss(n)
        xa, wa = 0.5 * (xa + 1.0), wa / 8.0
        xb, wb = 0.5 * (xb + 1.0), wb / 4.0
        xc, wc = 0.5 * (xc + 1.0), 0.5 * wc
        pts, wts = [], []
        for a, w1 in zip(xa, wa):
            for b, w2 in zip(xb, wb):
                for c, w3 in zip(xc, wc):
                    x = a
                    y = b * (1.0 - a)
                    z = c * (1.0 - a) * (1.0 - b)
                    pts.append((x, y, z))
                    wts.append(w1 * w2 * w3)
        return np.array(pts), np.array(wts)
    raise ValueError(f"unsupported dimension {dim}")


def map_to_physical(verts, pts, wts):
    """Map a reference-simplex rule to the physical simplex with given vertices.

    Returns (physical points, physical weights); weights are scaled by the
    ratio of physical to reference volume.
    """
    verts = np.asarray(verts, dtype=float)
    dim = len(pts[0]) if np.ndim(pts) > 1 else 1
    v0 = verts[0]
    jac = (verts[1:] - v0).T
    phys = v0 + np.asarray(pts) @ jac.T
    det = abs(np.linalg.det(jac))
    return phys, np.asarray(wts) * det


def facet_rule_points(facet_verts, degree):
    """Quadrature on a physical facet (segment in 2D, triangle in 3D).

    Returns (points in ambient coordinates, weights summing to the facet
    measure).
    """
    fv = np.asarray(facet_verts, dtype=float)
    nfv = fv.shape[0]
    if nfv == 2:
        x, w = gauss_01(degree // 2 + 1)
        pts = fv[0] + np.outer(x, fv[1] - fv[0])
        length = np.linalg.norm(fv[1] - fv[0])
        return pts, w * length
    if nfv == 3:
        rp, rw = simplex_rule(2, degree)
        e1, e2 = fv[1] - fv[0], fv[2] - fv[0]
        pts = fv[0] + np.outer(rp[:, 0], e1) + np.outer(rp[:, 1], e2)
        # Reference weights sum to 1/2; physical area is |e1 x e2| / 2.
        return pts, rw * np.linalg.norm(np.cross(e1, e2))
    raise ValueError("facet must have 2 or 3 vertices")
