import math

import numpy as np
import pytest

from lsqsem import geometry as geo
from lsqsem.cases import lshape_domain, square_domain
from lsqsem.errors import SpecError


def test_line_arc():
    arc = geo.line_arc((0, 0), (2, 1))
    np.testing.assert_allclose(arc.point(-1.0)[0], [0, 0], atol=1e-15)
    np.testing.assert_allclose(arc.point(1.0)[0], [2, 1], atol=1e-15)
    np.testing.assert_allclose(arc.point(0.0)[0], [1, 0.5], atol=1e-15)
    np.testing.assert_allclose(arc.deriv(0.3, 1)[0], [1, 0.5], atol=1e-15)
    assert arc.is_straight


def test_circle_arc():
    arc = geo.circle_arc((1, 0), 2.0, 0.0, math.pi / 2)
    np.testing.assert_allclose(arc.point(-1.0)[0], [3, 0], atol=1e-14)
    np.testing.assert_allclose(arc.point(1.0)[0], [1, 2], atol=1e-14)
    # derivative: d/ds = R * (pi/4) * (-sin a, cos a)
    d = arc.deriv(0.0, 1)[0]
    a = math.pi / 4
    np.testing.assert_allclose(d, [2 * (math.pi / 4) * -math.sin(a), 2 * (math.pi / 4) * math.cos(a)], atol=1e-14)
    assert not arc.is_straight


def test_expr_arc_detects_straightness():
    arc = geo.expr_arc("s + 1", "2*s - 0.5")
    assert arc.is_straight
    arc2 = geo.expr_arc("s", "s^2")
    assert not arc2.is_straight


def test_square_polygon_valid():
    poly = square_domain()
    for k in range(4):
        assert poly.interior_angle(k) == pytest.approx(math.pi / 2)
    lo, hi = poly.sector_frame(0)
    assert lo == pytest.approx(0.0)
    assert hi == pytest.approx(math.pi / 2)
    lo1, hi1 = poly.sector_frame(1)
    assert lo1 == pytest.approx(math.pi / 2)


def test_lshape_polygon():
    poly = lshape_domain()
    angles = [poly.interior_angle(k) for k in range(6)]
    assert angles[5] == pytest.approx(3 * math.pi / 2)
    for k in range(5):
        assert angles[k] == pytest.approx(math.pi / 2)
    lo, hi = poly.sector_frame(5)
    assert lo == pytest.approx(0.0)
    assert hi == pytest.approx(3 * math.pi / 2)


def test_validation_rejects_mismatched_endpoints():
    vs = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    arcs = [geo.line_arc(vs[i], vs[(i + 1) % 4]) for i in range(4)]
    arcs[2] = geo.line_arc([1, 1], [0.2, 1.1])  # wrong terminal point
    poly = geo.CurvilinearPolygon(vs, arcs, frozenset(range(4)), frozenset())
    with pytest.raises(SpecError, match="endpoint"):
        poly.validate()


def test_validation_rejects_bad_bc_partition():
    vs = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    arcs = [geo.line_arc(vs[i], vs[(i + 1) % 4]) for i in range(4)]
    poly = geo.CurvilinearPolygon(vs, arcs, frozenset([0, 1]), frozenset([1, 2, 3]))
    with pytest.raises(SpecError, match="partition"):
        poly.validate()
    poly2 = geo.CurvilinearPolygon(vs, arcs, frozenset([0, 1]), frozenset([3]))
    with pytest.raises(SpecError, match="partition"):
        poly2.validate()


def test_validation_rejects_self_intersection():
    # bowtie
    vs = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float)
    arcs = [geo.line_arc(vs[i], vs[(i + 1) % 4]) for i in range(4)]
    poly = geo.CurvilinearPolygon(vs, arcs, frozenset(range(4)), frozenset())
    with pytest.raises(SpecError, match="simple|angle"):
        poly.validate()


def test_derivative_growth_bound():
    poly = square_domain()
    poly.check_derivative_bound(C=2.0, L=2.0)  # segments easily satisfy this
    # amplitude * 40^3 = 192 exceeds the t=3 bound C*L^3*3! = 96
    wiggle = geo.expr_arc("s", "0.003*sin(40*s)")
    vs = np.array([[-1, 0], [1, 0], [1, 1], [-1, 1]], dtype=float)
    arcs = [wiggle] + [geo.line_arc(vs[i], vs[(i + 1) % 4]) for i in range(1, 4)]
    poly2 = geo.CurvilinearPolygon(vs, arcs, frozenset(range(4)), frozenset())
    with pytest.raises(SpecError, match="growth bound"):
        poly2.check_derivative_bound(C=2.0, L=2.0)


def test_constant_angle_function():
    poly = square_domain()
    f_lo, f_hi = geo.angle_functions(poly, 0, rho=0.3)
    r = np.array([0.05, 0.2])
    np.testing.assert_allclose(f_lo.value(r), 0.0, atol=1e-15)
    np.testing.assert_allclose(f_hi.value(r), math.pi / 2, atol=1e-15)
    np.testing.assert_allclose(f_hi.d1(r), 0.0, atol=1e-15)


def test_arc_angle_against_circle_closed_form():
    # circle of radius 1 centered at (0,1) passes through the origin; for a point
    # at distance r from the origin the polar angle is asin(r/2)
    arc = geo.circle_arc((0, 1), 1.0, -math.pi / 2, 0.0)
    f = geo.ArcAngle(arc, np.array([0.0, 0.0]), vertex_end=-1, ref_angle=0.0, r_max=1.2)
    rs = np.linspace(0.05, 0.9, 12)
    np.testing.assert_allclose(f.value(rs), np.arcsin(rs / 2), atol=1e-10)
    d1_exact = (0.5) / np.sqrt(1 - (rs / 2) ** 2)
    np.testing.assert_allclose(f.d1(rs), d1_exact, rtol=1e-9)
    d2_exact = (rs / 8.0) * (1 - (rs / 2) ** 2) ** -1.5
    np.testing.assert_allclose(f.d2(rs), d2_exact, rtol=1e-8)


def test_arc_angle_incoming_end():
    # same circle traversed the other way; vertex now at s = +1
    arc = geo.circle_arc((0, 1), 1.0, 0.0, -math.pi / 2)
    f = geo.ArcAngle(arc, np.array([0.0, 0.0]), vertex_end=+1, ref_angle=0.0, r_max=1.2)
    rs = np.linspace(0.05, 0.9, 7)
    np.testing.assert_allclose(f.value(rs), np.arcsin(rs / 2), atol=1e-10)


def test_param_curves_derivatives():
    for curve in (
        geo.Segment((0.0, 1.0), (2.0, -1.0)),
        geo.CircleEdge((0.5, 0.5), 1.5, 0.2, 1.7),
        geo.ExprEdge(geo.ex.parse("t^2", ("t",)), geo.ex.parse("sin(t)", ("t",))),
    ):
        t = np.linspace(0.05, 0.95, 9)
        h = 1e-6
        fd1 = (curve.point(t + h) - curve.point(t - h)) / (2 * h)
        np.testing.assert_allclose(curve.d1(t), fd1, atol=1e-7)
        fd2 = (curve.d1(t + h) - curve.d1(t - h)) / (2 * h)
        np.testing.assert_allclose(curve.d2(t), fd2, atol=1e-6)
        # scalar call shape
        assert curve.point(0.5).shape == (2,)
