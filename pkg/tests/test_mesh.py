import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lsqsem import geometry as geo
from lsqsem import mesh as msh
from lsqsem.cases import lshape_domain, polygon_from_vertices, square_domain
from lsqsem.errors import MeshError


def test_layer_radii_frozen_examples():
    np.testing.assert_allclose(
        msh.sector_layer_radii(0.5, 0.5, 3), [0.0, 0.125, 0.25, 0.5], atol=1e-16
    )
    np.testing.assert_allclose(
        msh.sector_layer_radii(1.0, 0.15, 4), [0.0, 0.003375, 0.0225, 0.15, 1.0], atol=1e-18
    )


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0.05, 2.0),
    st.floats(0.05, 0.9),
    st.integers(1, 12),
)
def test_layer_radii_invariants(rho, mu, M):
    r = msh.sector_layer_radii(rho, mu, M)
    assert len(r) == M + 1
    assert r[0] == 0.0
    assert r[-1] == pytest.approx(rho)
    ratios = r[1:-1] / r[2:]
    np.testing.assert_allclose(ratios, mu, rtol=1e-12)
    assert np.all(np.diff(r) > 0)


class _QuadAngle(geo.AngleFunction):
    """f(r) = c * r^2 (synthetic curved boundary for blend-map tests)."""

    def __init__(self, c):
        self.c = c

    def value(self, r):
        return self.c * np.asarray(r, dtype=float) ** 2

    def d1(self, r):
        return 2 * self.c * np.asarray(r, dtype=float)

    def d2(self, r):
        return 2 * self.c * np.ones_like(np.asarray(r, dtype=float))


def _layout(f_lo, f_hi, psi_lo, psi_hi, rho=1.0, mu=0.5, M=3):
    return msh.SectorLayout(
        k=0, center=np.zeros(2), rho=rho, mu=mu, M=M,
        psi=np.array([psi_lo, psi_hi]), f_lo=f_lo, f_hi=f_hi,
    )


def test_blend_straight_is_identity():
    lay = _layout(geo.ConstantAngle(0.3), geo.ConstantAngle(1.7), 0.3, 1.7)
    pts = np.column_stack([np.linspace(-3, -0.1, 9), np.linspace(0.35, 1.65, 9)])
    b = lay.blend(pts)
    np.testing.assert_allclose(b["theta"], pts[:, 1], atol=1e-14)
    np.testing.assert_allclose(b["th_phi"], 1.0, atol=1e-14)
    np.testing.assert_allclose(b["th_nu"], 0.0, atol=1e-14)
    np.testing.assert_allclose(b["th_nunu"], 0.0, atol=1e-14)
    np.testing.assert_allclose(b["th_nuphi"], 0.0, atol=1e-14)


def test_blend_curved_frozen_value():
    # lower boundary angle 0.1 r^2, upper constant pi/2, window (0, pi/2);
    # at nu = ln 0.5, phi = pi/4 the blended angle is pi/4 + 0.0125 exactly
    lay = _layout(_QuadAngle(0.1), geo.ConstantAngle(math.pi / 2), 0.0, math.pi / 2)
    b = lay.blend(np.array([[math.log(0.5), math.pi / 4]]))
    assert b["theta"][0] == pytest.approx(math.pi / 4 + 0.0125, abs=1e-15)
    # boundary interpolation property: theta(nu, psi_lo) = f_lo(e^nu)
    nus = np.linspace(-2, -0.1, 6)
    lo = lay.blend(np.column_stack([nus, np.zeros(6)]))
    np.testing.assert_allclose(lo["theta"], 0.1 * np.exp(2 * nus), atol=1e-14)
    hi = lay.blend(np.column_stack([nus, np.full(6, math.pi / 2)]))
    np.testing.assert_allclose(hi["theta"], math.pi / 2, atol=1e-14)


def test_blend_derivatives_match_fd():
    lay = _layout(_QuadAngle(0.07), _QuadAngle(-0.04), 0.0, 1.2)
    # note: f_hi here is psi_hi + offset? keep it honest: use value-shifted QuadAngle
    class _Shifted(geo.AngleFunction):
        def __init__(self, base, shift):
            self.base, self.shift = base, shift

        def value(self, r):
            return self.base.value(r) + self.shift

        def d1(self, r):
            return self.base.d1(r)

        def d2(self, r):
            return self.base.d2(r)

    lay = _layout(_QuadAngle(0.07), _Shifted(_QuadAngle(-0.04), 1.2), 0.0, 1.2)
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-2, -0.2, 20), rng.uniform(0.05, 1.15, 20)])
    b = lay.blend(pts)
    h = 1e-6
    for key, dvec in (("th_nu", [h, 0]), ("th_phi", [0, h])):
        fd = (lay.blend(pts + dvec)["theta"] - lay.blend(pts - dvec)["theta"]) / (2 * h)
        np.testing.assert_allclose(b[key], fd, atol=1e-6, err_msg=key)
    fd_nn = (lay.blend(pts + [h, 0])["th_nu"] - lay.blend(pts - [h, 0])["th_nu"]) / (2 * h)
    np.testing.assert_allclose(b["th_nunu"], fd_nn, atol=1e-6)
    fd_np = (lay.blend(pts + [0, h])["th_nu"] - lay.blend(pts - [0, h])["th_nu"]) / (2 * h)
    np.testing.assert_allclose(b["th_nuphi"], fd_np, atol=1e-6)


def test_gordon_hall_affine():
    gh = msh.GordonHallMap.from_sides(
        geo.Segment((0, 0), (2, 0)), geo.Segment((2, 0), (2, 1)),
        geo.Segment((0, 1), (2, 1)), geo.Segment((0, 0), (0, 1)),
    )
    pts = np.array([[0.25, 0.75], [0.5, 0.5]])
    np.testing.assert_allclose(gh.point(pts), [[0.5, 0.75], [1.0, 0.5]], atol=1e-14)
    J = gh.jac(pts)
    np.testing.assert_allclose(J, [np.diag([2.0, 1.0])] * 2, atol=1e-14)
    np.testing.assert_allclose(gh.second(pts), 0.0, atol=1e-14)


def test_gordon_hall_quarter_annulus_frozen():
    # radii 1 and 2 about the origin; at (xi,eta)=(1/2,1/2) the transfinite
    # formula gives (3*sqrt(2)/4, 3*sqrt(2)/4) by direct substitution
    gh = msh.GordonHallMap.from_sides(
        geo.CircleEdge((0, 0), 1.0, 0.0, math.pi / 2),
        geo.Segment((0, 1), (0, 2)),
        geo.CircleEdge((0, 0), 2.0, 0.0, math.pi / 2),
        geo.Segment((1, 0), (2, 0)),
    )
    val = gh.point(np.array([[0.5, 0.5]]))[0]
    np.testing.assert_allclose(val, [3 * math.sqrt(2) / 4] * 2, atol=1e-12)
    # jacobian and second derivatives vs finite differences
    rng = np.random.default_rng(1)
    pts = rng.uniform(0.1, 0.9, size=(15, 2))
    h = 1e-6
    J = gh.jac(pts)
    for q, dvec in ((0, [h, 0]), (1, [0, h])):
        fd = (gh.point(pts + dvec) - gh.point(pts - dvec)) / (2 * h)
        np.testing.assert_allclose(J[:, :, q], fd, atol=1e-7)
    H = gh.second(pts)
    for q, dvec in ((0, [h, 0]), (1, [0, h])):
        fd = (gh.jac(pts + dvec) - gh.jac(pts - dvec)) / (2 * h)
        np.testing.assert_allclose(H[:, :, :, q], fd, atol=5e-5)


def test_gordon_hall_rejects_open_corner():
    with pytest.raises(MeshError, match="close up"):
        msh.GordonHallMap.from_sides(
            geo.Segment((0, 0), (1, 0)), geo.Segment((1, 0.2), (1, 1)),
            geo.Segment((0, 1), (1, 1)), geo.Segment((0, 0), (0, 1)),
        )


# ---------------------------------------------------------------------------
# full meshes


def _census(mesh):
    fam = {}
    for e in mesh.edges:
        fam[e.family] = fam.get(e.family, 0) + 1
    return fam


@pytest.mark.parametrize("M", [2, 4])
def test_square_mesh_census(M):
    mesh = msh.build_mesh(square_domain(), rho=0.2, mu=0.15, M=M)
    kinds = mesh.summary()["elements"]
    # one block, 4 hot corners, 2 quads each: 8 outer elements
    assert kinds["outer"] == 8
    # 4 vertices x I=2 wedges x (M-1) polynomial layers
    assert kinds["sector"] == 8 * (M - 1)
    assert kinds["core"] == 8
    assert all(mesh.sectors[k].I == 2 for k in range(4))
    fam = _census(mesh)
    assert fam["ring"] == 8
    assert fam["core_link"] == 8
    assert fam.get("sector_arc", 0) == 8 * (M - 2)
    assert fam["sector_radial"] == 4 * (M - 1)  # (I-1)=1 radial seam per vertex per layer
    # outer boundary: every unit side carries 2 pieces
    bdry = [e for e in mesh.edges if e.family == "boundary"]
    outer_bdry = [e for e in bdry if e.region == "outer"]
    sector_bdry = [e for e in bdry if e.region == "sector"]
    assert len(outer_bdry) == 8
    assert len(sector_bdry) == 4 * 2 * (M - 1)
    # interior outer-outer seams: (8 elements * 4 sides - 8 ring - 8 boundary) / 2
    assert fam["outer"] == (8 * 4 - 8 - 8) // 2


@pytest.mark.parametrize("M", [2, 3])
def test_lshape_mesh_census(M):
    mesh = msh.build_mesh(lshape_domain(), rho=0.2, mu=0.15, M=M)
    kinds = mesh.summary()["elements"]
    assert kinds["outer"] == 20
    assert kinds["sector"] == 16 * (M - 1)
    assert kinds["core"] == 16
    Is = [mesh.sectors[k].I for k in range(6)]
    assert Is == [2, 2, 2, 2, 2, 6]
    fam = _census(mesh)
    assert fam["ring"] == 16
    # angular breakpoints at the re-entrant corner cover [0, 3pi/2] uniformly
    psi = mesh.sectors[5].psi
    np.testing.assert_allclose(psi, np.arange(7) * math.pi / 4, atol=1e-12)


def test_mesh_edge_orientation_consistency():
    # shared physical points across every interior edge agree after flip handling
    mesh = msh.build_mesh(lshape_domain(), rho=0.2, mu=0.2, M=3)
    t = np.linspace(0, 1, 7)
    for edge in mesh.edges:
        if edge.family not in ("outer", "ring", "sector_arc", "sector_radial"):
            continue
        ea = mesh.elements[edge.a[0]]
        eb = mesh.elements[edge.b[0]]
        if eb.kind == "core":
            continue
        pa = ea.physical(ea.side_points(edge.a[1], t))
        tb = 1 - t if edge.flip_b else t
        pb = eb.physical(eb.side_points(edge.b[1], tb))
        np.testing.assert_allclose(pa, pb, atol=1e-9, err_msg=f"edge {edge.id} {edge.family}")


def test_sector_outer_side_convention_match():
    # element side_points + physical must trace the Gordon-Hall side curves
    mesh = msh.build_mesh(square_domain(), rho=0.2, mu=0.15, M=2)
    e = next(el for el in mesh.elements if el.kind == "outer")
    t = np.linspace(0, 1, 5)
    for side in range(4):
        curve = e.gh.sides[side]
        np.testing.assert_allclose(
            e.physical(e.side_points(side, t)), curve.point(t), atol=1e-12
        )


def test_ring_nodes_lie_on_sigma2_circle():
    mesh = msh.build_mesh(lshape_domain(), rho=0.2, mu=0.15, M=3)
    for k, lay in mesh.sectors.items():
        sigma2 = lay.radii[1]
        ids = mesh.ring2_nodes[k]
        assert len(ids) == lay.I + 1
        for nid in ids:
            r = np.linalg.norm(mesh.node_xy[nid] - lay.center)
            assert r == pytest.approx(sigma2, rel=1e-9)


def test_pentagon_fan_template():
    verts = [[math.cos(a), math.sin(a)] for a in np.linspace(0, 2 * math.pi, 6)[:-1]]
    poly = polygon_from_vertices(verts)
    mesh = msh.build_mesh(poly, rho=0.12, mu=0.2, M=2)
    kinds = mesh.summary()["elements"]
    # 5 fan blocks: each has 1 hot corner (2 quads) + 3 cold (1 quad each)
    assert kinds["outer"] == 5 * 5
    assert all(mesh.sectors[k].I == 2 for k in range(5))


def test_mesh_errors():
    with pytest.raises(MeshError, match="rho|radius"):
        msh.build_mesh(square_domain(), rho=0.4, mu=0.15, M=2)  # bite exceeds quarter side
    with pytest.raises(MeshError, match="curved"):
        vs = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        arcs = [
            geo.line_arc(vs[0], vs[1]),
            geo.line_arc(vs[1], vs[2]),
            geo.expr_arc("0.5 - 0.5*s", "1 + 0.01*(1 - s^2)"),  # bowed top edge
            geo.line_arc(vs[3], vs[0]),
        ]
        poly = geo.CurvilinearPolygon(vs, arcs, frozenset(range(4)), frozenset())
        msh.build_mesh(poly, rho=0.2, mu=0.15, M=2)
    # two reflex corners: plus-sign-ish polygon the template cannot split
    vs = np.array(
        [[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [3, 2], [3, 3], [0, 3]], dtype=float
    )
    poly = polygon_from_vertices(vs)
    with pytest.raises(MeshError, match="decomposable|reflex"):
        msh.build_mesh(poly, rho=0.05, mu=0.15, M=2)


def test_i_config_validation():
    mesh = msh.build_mesh(square_domain(), rho=0.2, mu=0.15, M=2, I_config=2)
    assert all(mesh.sectors[k].I == 2 for k in range(4))
    with pytest.raises(MeshError, match="I_0"):
        msh.build_mesh(square_domain(), rho=0.2, mu=0.15, M=2, I_config=4)


def test_single_square_mesh():
    mesh = msh.single_square()
    assert len(mesh.elements) == 1
    assert len(mesh.edges) == 4
    assert all(e.bc == "dirichlet" for e in mesh.edges)
    e = mesh.elements[0]
    np.testing.assert_allclose(e.physical(np.array([[0.3, 0.8]])), [[0.3, 0.8]], atol=1e-15)
