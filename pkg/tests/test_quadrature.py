"""Exactness and normalization of the simplex quadrature rules."""

import math

import numpy as np
import pytest

from tdnns.quadrature import (
    facet_rule_points,
    gauss_01,
    map_to_physical,
    simplex_rule,
)


def monomial_integral_simplex(expts):
    """Exact integral of prod x_i^a_i over the unit simplex.

    int_T x^a = prod(a_i!) * dim-dependent normalization / (|a| + dim)!
    """
    dim = len(expts)
    num = np.prod([math.factorial(a) for a in expts])
    return num / math.factorial(sum(expts) + dim)


@pytest.mark.parametrize("dim", [1, 2, 3])
@pytest.mark.parametrize("degree", [1, 2, 3, 4, 5, 6, 7])
def test_polynomial_exactness(dim, degree):
    pts, wts = simplex_rule(dim, degree)
    pts = np.atleast_2d(pts if dim > 1 else np.asarray(pts)[:, None])
    for total in range(degree + 1):
        for expts in _exponents(dim, total):
            vals = np.prod(pts ** np.asarray(expts), axis=1)
            approx = float(wts @ vals)
            exact = monomial_integral_simplex(expts)
            assert approx == pytest.approx(exact, rel=1e-12, abs=1e-15), (
                f"dim={dim} deg={degree} monomial={expts}")


def _exponents(dim, total):
    if dim == 1:
        yield (total,)
        return
    for lead in range(total + 1):
        for rest in _exponents(dim - 1, total - lead):
            yield (lead,) + rest


@pytest.mark.parametrize("dim,vol", [(2, 0.5), (3, 1.0 / 6.0)])
def test_weights_sum_to_reference_volume(dim, vol):
    for degree in range(1, 9):
        _, wts = simplex_rule(dim, degree)
        assert wts.sum() == pytest.approx(vol, rel=1e-14)
        assert np.all(wts > 0)


def test_points_inside_reference_simplex():
    for dim in (2, 3):
        pts, _ = simplex_rule(dim, 6)
        assert np.all(pts >= 0)
        assert np.all(pts.sum(axis=1) <= 1 + 1e-14)


def test_gauss_01_basics():
    x, w = gauss_01(4)
    assert w.sum() == pytest.approx(1.0, rel=1e-14)
    # degree-7 exactness of the 4-point rule
    for p in range(8):
        assert w @ x**p == pytest.approx(1.0 / (p + 1), rel=1e-13)


def test_map_to_physical_triangle():
    verts = np.array([[1.0, 1.0], [3.0, 1.0], [1.0, 4.0]])
    pts, wts = simplex_rule(2, 3)
    phys, pw = map_to_physical(verts, pts, wts)
    assert pw.sum() == pytest.approx(3.0, rel=1e-13)  # area = 2*3/2
    # integral of x over the triangle equals area * centroid_x
    assert pw @ phys[:, 0] == pytest.approx(3.0 * verts[:, 0].mean(), rel=1e-13)


def test_facet_rule_segment():
    fv = np.array([[0.0, 0.0], [3.0, 4.0]])
    pts, wts = facet_rule_points(fv, 4)
    assert wts.sum() == pytest.approx(5.0, rel=1e-14)
    # linear function integrates to measure * midpoint value
    f = pts[:, 0] + 2 * pts[:, 1]
    assert wts @ f == pytest.approx(5.0 * (1.5 + 4.0), rel=1e-13)


def test_facet_rule_triangle_3d():
    fv = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    pts, wts = facet_rule_points(fv, 3)
    assert wts.sum() == pytest.approx(2.0, rel=1e-14)
    assert wts @ pts[:, 0] == pytest.approx(2.0 * 2.0 / 3.0, rel=1e-13)


def test_facet_rule_rejects_bad_vertex_count():
    with pytest.raises(ValueError):
        facet_rule_points(np.zeros((4, 3)), 2)


def test_unsupported_dimension():
    with pytest.raises(ValueError):
        simplex_rule(4, 2)
