"""Mesh construction: graded corner sectors + blended quads for the outer region.

Around every polygon vertex a circular sector of radius rho is cut out and
covered by geometrically graded annular layers in modified polar coordinates
(nu, phi) = (ln r, angle); the innermost layer (down to r = 0) carries a
single constant unknown per vertex.  The remaining outer region is covered by
straight-or-curved quadrilaterals with Gordon-Hall transfinite maps.

Outer template
--------------
The outer region is decomposed into straight-sided quadrilateral *blocks*
whose corners include every polygon vertex (a square is one block; one reflex
vertex is handled by splitting along the continuations of its two incident
edges; other convex polygons are fanned about the centroid).  Each block is
quartered at its side midpoints; a quarter holding a polygon vertex gets a
circular bite of radius rho and is filled with two blended quads (so each
incident block contributes 2 angular divisions at that vertex); other
quarters become single quads.  Every interior edge of the result is a full
side of both neighbours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MeshError, SpecError
from .geometry import (
    AngleFunction,
    CircleEdge,
    ConstantAngle,
    CurvilinearPolygon,
    Segment,
    angle_functions,
)

TWO_PI = 2.0 * math.pi


def sector_layer_radii(rho: float, mu: float, M: int) -> np.ndarray:
    """Layer radii [0, rho*mu^(M-1), ..., rho*mu, rho] (M+1 entries)."""
    if not (0 < mu < 1):
        raise SpecError(f"grading ratio must be in (0,1), got {mu}")
    if M < 1:
        raise SpecError(f"need at least one layer, got M={M}")
    if rho <= 0:
        raise SpecError(f"sector radius must be positive, got {rho}")
    return np.concatenate(([0.0], rho * mu ** np.arange(M - 1, -1, -1.0)))


# ---------------------------------------------------------------------------
# Gordon-Hall transfinite map on [0,1]^2

@dataclass
class GordonHallMap:
    sides: tuple  # (bottom, right, top, left); top/bottom run in xi, left/right in eta
    corners: np.ndarray  # (4,2): [c00, c10, c11, c01]

    @classmethod
    def from_sides(cls, s0, s1, s2, s3, tol: float = 1e-10):
        c00, c10 = s0.point(0.0), s0.point(1.0)
        c01, c11 = s2.point(0.0), s2.point(1.0)
        mism = max(
            np.linalg.norm(s3.point(0.0) - c00),
            np.linalg.norm(s3.point(1.0) - c01),
            np.linalg.norm(s1.point(0.0) - c10),
            np.linalg.norm(s1.point(1.0) - c11),
        )
        if mism > tol * max(1.0, np.max(np.abs([c00, c10, c01, c11]))):
            raise MeshError(f"element sides do not close up (corner mismatch {mism:.2e})")
        return cls((s0, s1, s2, s3), np.array([c00, c10, c11, c01]))

    def point(self, pts):
        pts = np.atleast_2d(pts)
        xi, eta = pts[:, 0:1], pts[:, 1:2]
        s0, s1, s2, s3 = self.sides
        c00, c10, c11, c01 = self.corners
        blend = (
            (1 - eta) * s0.point(pts[:, 0])
            + eta * s2.point(pts[:, 0])
            + (1 - xi) * s3.point(pts[:, 1])
            + xi * s1.point(pts[:, 1])
        )
        bilin = (
            (1 - xi) * (1 - eta) * c00
            + xi * (1 - eta) * c10
            + xi * eta * c11
            + (1 - xi) * eta * c01
        )
        return blend - bilin

    def jac(self, pts):
        """(n,2,2) array J[n,p,q] = d x_p / d w_q."""
        pts = np.atleast_2d(pts)
        xi, eta = pts[:, 0:1], pts[:, 1:2]
        s0, s1, s2, s3 = self.sides
        c00, c10, c11, c01 = self.corners
        d_xi = (
            (1 - eta) * s0.d1(pts[:, 0])
            + eta * s2.d1(pts[:, 0])
            + (s1.point(pts[:, 1]) - s3.point(pts[:, 1]))
            - ((1 - eta) * (c10 - c00) + eta * (c11 - c01))
        )
        d_eta = (
            (s2.point(pts[:, 0]) - s0.point(pts[:, 0]))
            + (1 - xi) * s3.d1(pts[:, 1])
            + xi * s1.d1(pts[:, 1])
            - ((1 - xi) * (c01 - c00) + xi * (c11 - c10))
        )
        return np.stack([d_xi, d_eta], axis=-1)

    def second(self, pts):
        """(n,2,2,2) array H[n,p,q,r] = d^2 x_p / (d w_q d w_r)."""
        pts = np.atleast_2d(pts)
        xi, eta = pts[:, 0:1], pts[:, 1:2]
        s0, s1, s2, s3 = self.sides
        c00, c10, c11, c01 = self.corners
        xx = (1 - eta) * s0.d2(pts[:, 0]) + eta * s2.d2(pts[:, 0])
        ee = (1 - xi) * s3.d2(pts[:, 1]) + xi * s1.d2(pts[:, 1])
        xe = (
            s2.d1(pts[:, 0])
            - s0.d1(pts[:, 0])
            + s1.d1(pts[:, 1])
            - s3.d1(pts[:, 1])
            - (c00 - c10 + c11 - c01)
        )
        n = len(pts)
        H = np.empty((n, 2, 2, 2))
        H[:, :, 0, 0] = xx
        H[:, :, 1, 1] = ee
        H[:, :, 0, 1] = xe
        H[:, :, 1, 0] = xe
        return H


# ---------------------------------------------------------------------------
# sector layout per polygon vertex

@dataclass
class SectorLayout:
    k: int
    center: np.ndarray
    rho: float
    mu: float
    M: int
    psi: np.ndarray  # I_k + 1 unwrapped angular breakpoints
    f_lo: AngleFunction
    f_hi: AngleFunction
    radii: np.ndarray = field(init=False)
    nu: np.ndarray = field(init=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.radii = sector_layer_radii(self.rho, self.mu, self.M)
        self.nu = np.log(self.radii[1:])

    @property
    def I(self) -> int:
        return len(self.psi) - 1

    @property
    def psi_lo(self) -> float:
        return float(self.psi[0])

    @property
    def psi_hi(self) -> float:
        return float(self.psi[-1])

    def blend(self, pts):
        """Angle map theta(nu, phi) and its derivatives at local points (n,2).

        Returns dict with theta, th_nu, th_phi, th_nunu, th_nuphi, r (=e^nu).
        th_phiphi is identically zero (theta is affine in phi).
        """
        pts = np.atleast_2d(pts)
        nu, phi = pts[:, 0], pts[:, 1]
        r = np.exp(nu)
        lo, hi = self.psi_lo, self.psi_hi
        span = hi - lo
        f0, f1 = self.f_lo.value(r), self.f_hi.value(r)
        f0p, f1p = self.f_lo.d1(r), self.f_hi.d1(r)
        f0pp, f1pp = self.f_lo.d2(r), self.f_hi.d2(r)
        wl = (phi - lo) / span
        wu = (phi - hi) / span
        theta = wl * f1 - wu * f0
        th_phi = (f1 - f0) / span
        th_nu = r * (wl * f1p - wu * f0p)
        th_nunu = r * (wl * f1p - wu * f0p) + r**2 * (wl * f1pp - wu * f0pp)
        th_nuphi = r * (f1p - f0p) / span
        return {
            "theta": theta, "th_nu": th_nu, "th_phi": th_phi,
            "th_nunu": th_nunu, "th_nuphi": th_nuphi, "r": r,
        }

    def physical(self, pts):
        b = self.blend(pts)
        return self.center + b["r"][:, None] * np.stack(
            [np.cos(b["theta"]), np.sin(b["theta"])], axis=-1
        )


# ---------------------------------------------------------------------------
# elements and edges

@dataclass
class Element:
    id: int
    kind: str  # 'outer' | 'sector' | 'core'
    dom: tuple | None = None  # ((a0,b0),(a1,b1)); outer uses [0,1]^2; core None
    vertex: int | None = None
    layer: int | None = None
    wedge: int | None = None
    sector: SectorLayout | None = None
    gh: GordonHallMap | None = None

    def n_coeffs(self, W: int) -> int:
        return 1 if self.kind == "core" else (W + 1) ** 2

    def local_corners(self) -> np.ndarray:
        (a0, b0), (a1, b1) = self.dom
        return np.array([[a0, a1], [b0, a1], [b0, b1], [a0, b1]])

    def side_points(self, side: int, t) -> np.ndarray:
        """Local coordinates of side points; t in [0,1] increases with the side param."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        (a0, b0), (a1, b1) = self.dom
        if side == 0:
            return np.column_stack([a0 + t * (b0 - a0), np.full_like(t, a1)])
        if side == 1:
            return np.column_stack([np.full_like(t, b0), a1 + t * (b1 - a1)])
        if side == 2:
            return np.column_stack([a0 + t * (b0 - a0), np.full_like(t, b1)])
        if side == 3:
            return np.column_stack([np.full_like(t, a0), a1 + t * (b1 - a1)])
        raise ValueError(f"side must be 0..3, got {side}")

    def side_extent(self, side: int) -> float:
        (a0, b0), (a1, b1) = self.dom
        return (b0 - a0) if side in (0, 2) else (b1 - a1)

    def physical(self, pts) -> np.ndarray:
        if self.kind == "outer":
            return self.gh.point(pts)
        if self.kind == "sector":
            return self.sector.physical(pts)
        raise ValueError("core elements have no local coordinates")


@dataclass
class MeshEdge:
    id: int
    family: str  # 'sector_arc' | 'sector_radial' | 'core_link' | 'ring' | 'outer' | 'boundary'
    a: tuple[int, int]  # (element id, side); orientation master
    b: tuple[int, int] | None = None
    flip_b: bool = False
    bc: str | None = None  # for boundary edges: 'dirichlet' | 'neumann'
    arc: int | None = None  # boundary arc index
    region: str | None = None  # boundary edges: 'sector' | 'outer'
    vertex: int | None = None  # owning sector vertex (sector families + ring)


# ---------------------------------------------------------------------------
# block decomposition of the outer region

@dataclass
class Block:
    corners: np.ndarray  # (4,2) CCW
    side_arc: list  # per side i (corner i -> i+1): boundary arc index or None
    hot: list  # per corner i: polygon vertex index or None


def _poly_is_convex(poly: CurvilinearPolygon) -> bool:
    return all(poly.interior_angle(k) < math.pi - 1e-9 for k in range(poly.p))


def _reflex_vertices(poly: CurvilinearPolygon) -> list[int]:
    return [k for k in range(poly.p) if poly.interior_angle(k) > math.pi + 1e-9]


def _ray_boundary_hit(poly: CurvilinearPolygon, origin, direction):
    """First boundary intersection of a ray from an interior-adjacent origin.

    Straight arcs only.  Returns (arc index, hit point, parameter along arc chord).
    """
    best = None
    for i in range(poly.p):
        pa = poly.vertices[i]
        pb = poly.vertices[(i + 1) % poly.p]
        seg = pb - pa
        mat = np.array([[direction[0], -seg[0]], [direction[1], -seg[1]]])
        det = np.linalg.det(mat)
        if abs(det) < 1e-14:
            continue
        t, u = np.linalg.solve(mat, pa - origin)
        if t > 1e-9 and -1e-12 <= u <= 1 + 1e-12:
            if best is None or t < best[0]:
                best = (t, i, origin + t * np.asarray(direction), u)
    if best is None:
        raise MeshError("outer region not decomposable: reflex split ray misses the boundary")
    return best[1], best[2], best[3]


def _vertex_at(poly: CurvilinearPolygon, point, tol) -> int | None:
    d = np.linalg.norm(poly.vertices - point, axis=1)
    j = int(np.argmin(d))
    return j if d[j] <= tol else None


def _blocks_single(poly: CurvilinearPolygon) -> list[Block]:
    return [
        Block(
            corners=poly.vertices.copy(),
            side_arc=[0, 1, 2, 3],
            hot=[0, 1, 2, 3],
        )
    ]


def _blocks_fan(poly: CurvilinearPolygon) -> list[Block]:
    ctr = poly.vertices.mean(axis=0)
    mids = np.array([poly.arcs[i].point(0.0)[0] for i in range(poly.p)])
    blocks = []
    for k in range(poly.p):
        prev = (k - 1) % poly.p
        blocks.append(
            Block(
                corners=np.array([poly.vertices[k], mids[k], ctr, mids[prev]]),
                side_arc=[k, None, None, prev],
                hot=[k, None, None, None],
            )
        )
    return blocks


def _blocks_one_reflex(poly: CurvilinearPolygon, kr: int, tol: float) -> list[Block]:
    """Split at a single reflex vertex along the continuations of its edges."""
    R = poly.vertices[kr]
    t_out = poly.out_tangent(kr)
    t_in = -poly.back_tangent(kr)  # forward continuation of the incoming edge
    arc_h1, H1, _ = _ray_boundary_hit(poly, R, -t_out)
    arc_h2, H2, _ = _ray_boundary_hit(poly, R, t_in)

    # walk the boundary CCW from kr, cutting at H2 then H1
    cut_points = [(arc_h2, H2), (arc_h1, H1)]
    pieces = []
    chain = [R]
    chain_arcs = []  # arc index under chain segment `chain[i] -> chain[i+1]`
    cut_iter = iter(cut_points)
    next_cut = next(cut_iter)
    k = kr
    guard = 0
    while True:
        guard += 1
        if guard > 4 * poly.p + 8:
            raise MeshError("outer region not decomposable: reflex split did not close")
        arc_i = k  # arc leaving vertex k
        nxt = (k + 1) % poly.p
        end = poly.vertices[nxt]
        if next_cut is not None and next_cut[0] == arc_i and (
            np.linalg.norm(next_cut[1] - chain[-1]) > tol
        ):
            chain.append(next_cut[1])
            chain_arcs.append(arc_i)
            pieces.append((list(chain), list(chain_arcs)))
            chain = [next_cut[1]]
            chain_arcs = []
            hit = next_cut[1]
            next_cut = next(cut_iter, None)
            # continue along the same arc from the hit point
            if np.linalg.norm(hit - end) <= tol:
                k = nxt
                if k == kr:
                    break
                continue
            # remainder of this arc
            chain.append(end)
            chain_arcs.append(arc_i)
            k = nxt
            if k == kr:
                break
            continue
        chain.append(end)
        chain_arcs.append(arc_i)
        k = nxt
        if k == kr:
            break
    pieces.append((list(chain), list(chain_arcs)))

    if len(pieces) != 3:
        raise MeshError("outer region not decomposable: reflex split produced wrong piece count")

    # close each piece back to R with interior ray segments
    blocks = []
    for pts, arcs_under in pieces:
        corners = list(pts)
        arcs_list = list(arcs_under)
        if np.linalg.norm(corners[0] - R) > tol:
            corners = [R] + corners
            arcs_list = [None] + arcs_list
        if np.linalg.norm(corners[-1] - R) > tol:
            arcs_list = arcs_list + [None]  # closing side back to R
        else:
            corners = corners[:-1]
        if len(corners) != 4:
            raise MeshError(
                "outer region not decomposable: reflex split piece is not a quadrilateral "
                f"({len(corners)} corners)"
            )
        hot = [_vertex_at(poly, c, tol) for c in corners]
        blocks.append(Block(np.array(corners), arcs_list, hot))
    return blocks


def _build_blocks(poly: CurvilinearPolygon) -> list[Block]:
    tol = 1e-9 * max(1.0, poly.scale())
    reflex = _reflex_vertices(poly)
    if not reflex:
        if poly.p == 4:
            return _blocks_single(poly)
        return _blocks_fan(poly)
    if len(reflex) == 1:
        return _blocks_one_reflex(poly, reflex[0], tol)
    raise MeshError(
        "outer region not decomposable by the built-in template: "
        f"{len(reflex)} reflex vertices (only one is supported)"
    )


# ---------------------------------------------------------------------------
# mesh

@dataclass
class Mesh:
    poly: CurvilinearPolygon
    rho: float
    mu: float
    M: int
    sectors: dict  # vertex k -> SectorLayout
    elements: list
    edges: list
    node_xy: np.ndarray  # unique element-corner points (n_nodes, 2)
    elem_nodes: dict  # elem id -> tuple of 4 node ids (poly elements only)
    ring2_nodes: dict  # vertex k -> sorted tuple of node ids on its sigma_2 circle

    def poly_elements(self):
        return [e for e in self.elements if e.kind != "core"]

    def core_elements(self):
        return [e for e in self.elements if e.kind == "core"]

    def summary(self) -> dict:
        fam = {}
        for e in self.edges:
            fam[e.family] = fam.get(e.family, 0) + 1
        kinds = {}
        for e in self.elements:
            kinds[e.kind] = kinds.get(e.kind, 0) + 1
        return {"elements": kinds, "edges": fam, "nodes": len(self.node_xy)}

    def to_dict(self) -> dict:
        elems = []
        for e in self.elements:
            rec = {"id": e.id, "kind": e.kind}
            if e.kind == "outer":
                rec["corners"] = [list(map(float, c)) for c in e.gh.corners]
            else:
                rec["vertex"] = e.vertex
                rec["layer"] = e.layer
                rec["wedge"] = e.wedge
            if e.dom is not None:
                rec["dom"] = [[float(e.dom[0][0]), float(e.dom[0][1])],
                              [float(e.dom[1][0]), float(e.dom[1][1])]]
            elems.append(rec)
        edges = []
        for ed in self.edges:
            edges.append({
                "id": ed.id, "family": ed.family, "a": list(ed.a),
                "b": list(ed.b) if ed.b else None, "flip": ed.flip_b,
                "bc": ed.bc, "arc": None if ed.arc is None else ed.arc + 1,
                "vertex": ed.vertex,
            })
        return {"summary": self.summary(), "elements": elems, "edges": edges}


def _node_key(p, tol):
    return (int(round(p[0] / tol)), int(round(p[1] / tol)))


class _NodeBank:
    def __init__(self, tol):
        self.tol = tol
        self.table = {}
        self.points = []

    def get(self, p) -> int:
        key = _node_key(p, self.tol)
        if key not in self.table:
            self.table[key] = len(self.points)
            self.points.append(np.asarray(p, dtype=float))
        return self.table[key]


def build_mesh(
    poly: CurvilinearPolygon,
    rho: float,
    mu: float,
    M: int,
    lam: float = 2.0,
    I_config=None,
) -> Mesh:
    poly.validate()
    scale = max(1.0, poly.scale())
    tol = 1e-9 * scale

    for i, arc in enumerate(poly.arcs):
        if not arc.is_straight:
            raise MeshError(
                f"outer region not decomposable by the built-in template: arc {i + 1} is curved"
            )

    radii = sector_layer_radii(rho, mu, M)  # validates rho/mu/M

    # pairwise sector disjointness
    for k in range(poly.p):
        for m in range(k + 1, poly.p):
            d = np.linalg.norm(poly.vertices[k] - poly.vertices[m])
            if 2 * rho > d * 0.999:
                raise MeshError(
                    f"overlapping sectors: vertices {k} and {m} are {d:.3g} apart "
                    f"but rho={rho:.3g}"
                )

    blocks = _build_blocks(poly)

    # --- collect per-vertex wedges from hot block corners -------------------
    frames = {k: poly.sector_frame(k) for k in range(poly.p)}
    wedges = {k: [] for k in range(poly.p)}  # entries: (a_rel, span, block idx, corner idx)
    for bi, blk in enumerate(blocks):
        for t in range(4):
            k = blk.hot[t]
            if k is None:
                continue
            q = blk.corners[t]
            nxt = blk.corners[(t + 1) % 4]
            prv = blk.corners[(t - 1) % 4]
            u0 = nxt - q
            u1 = prv - q
            a0 = math.atan2(u0[1], u0[0])
            span = (math.atan2(u1[1], u1[0]) - a0) % TWO_PI
            psi_lo, psi_hi = frames[k]
            a_rel = (a0 - psi_lo) % TWO_PI
            if a_rel > (psi_hi - psi_lo) + 1e-9:
                if a_rel > TWO_PI - 1e-9:
                    a_rel = 0.0
                else:
                    raise MeshError(f"sector wedge at vertex {k} falls outside its angular window")
            wedges[k].append((a_rel, span, bi, t))

    for k in range(poly.p):
        if not wedges[k]:
            raise MeshError(f"outer template left vertex {k} uncovered (no incident block corner)")
        wedges[k].sort()
        omega = frames[k][1] - frames[k][0]
        cursor = 0.0
        for a_rel, span, _, _ in wedges[k]:
            if abs(a_rel - cursor) > 1e-9:
                raise MeshError(f"sector angular coverage gap at vertex {k} near angle offset {cursor:.6f}")
            cursor += span
        if abs(cursor - omega) > 1e-9:
            raise MeshError(f"sector angular coverage at vertex {k} sums to {cursor:.6f}, expected {omega:.6f}")

    # angular breakpoints: 2 divisions per block corner
    m_div = 2
    psi_all = {}
    offsets = {}  # (block, corner) -> first global wedge index at that vertex
    for k in range(poly.p):
        psi_lo = frames[k][0]
        pts = [psi_lo]
        for a_rel, span, bi, t in wedges[k]:
            offsets[(bi, t)] = len(pts) - 1
            for d in range(1, m_div + 1):
                pts.append(psi_lo + a_rel + span * d / m_div)
        psi_all[k] = np.array(pts)
        gaps = np.diff(psi_all[k])
        if np.max(gaps) > lam * np.min(gaps) + 1e-12:
            raise MeshError(
                f"angular partition at vertex {k} is not quasi-uniform "
                f"(ratio {np.max(gaps) / np.min(gaps):.3f} > {lam})"
            )

    if I_config is not None:
        cfg = (
            {k: int(I_config) for k in range(poly.p)}
            if np.ndim(I_config) == 0
            else {k: int(v) for k, v in enumerate(I_config)}
        )
        for k, want in cfg.items():
            have = len(psi_all[k]) - 1
            if want != have:
                raise MeshError(
                    f"angular division request I_{k}={want} incompatible with the outer "
                    f"template (template produces I_{k}={have})"
                )

    # --- sector layouts ------------------------------------------------------
    sectors = {}
    for k in range(poly.p):
        f_lo, f_hi = angle_functions(poly, k, rho)
        sectors[k] = SectorLayout(
            k=k, center=poly.vertices[k], rho=rho, mu=mu, M=M,
            psi=psi_all[k], f_lo=f_lo, f_hi=f_hi,
        )

    # --- emit outer elements --------------------------------------------------
    elements: list[Element] = []
    side_records = []  # (elem_id, side, tag, payload)

    def _emit_outer(sides, provenance):
        gh = GordonHallMap.from_sides(*sides, tol=tol)
        e = Element(
            id=len(elements), kind="outer",
            dom=((0.0, 1.0), (0.0, 1.0)), gh=gh,
        )
        elements.append(e)
        for s, prov in enumerate(provenance):
            side_records.append((e.id, s, *prov))
        return e

    for bi, blk in enumerate(blocks):
        q = blk.corners
        mids = [(q[t] + q[(t + 1) % 4]) / 2 for t in range(4)]
        ctr = q.mean(axis=0)
        for t in range(4):
            k = blk.hot[t]
            m_t = mids[t]
            m_p = mids[(t - 1) % 4]
            arc_t = blk.side_arc[t]
            arc_p = blk.side_arc[(t - 1) % 4]
            if k is None:
                _emit_outer(
                    (
                        Segment(tuple(q[t]), tuple(m_t)),
                        Segment(tuple(m_t), tuple(ctr)),
                        Segment(tuple(m_p), tuple(ctr)),
                        Segment(tuple(q[t]), tuple(m_p)),
                    ),
                    [
                        ("boundary", arc_t) if arc_t is not None else ("interior", None),
                        ("interior", None),
                        ("interior", None),
                        ("boundary", arc_p) if arc_p is not None else ("interior", None),
                    ],
                )
                continue
            # hot corner: carve the bite, fill with two blended quads
            for seg_end, nm in ((m_t, "next"), (m_p, "prev")):
                if np.linalg.norm(seg_end - q[t]) < rho / 0.45:
                    raise MeshError(
                        f"sector radius too large for the outer template at vertex {k}: "
                        f"rho={rho:.3g} vs quarter-side {np.linalg.norm(seg_end - q[t]):.3g} "
                        "(need rho <= 0.45 * quarter-side)"
                    )
            a_rel, span, _, _ = next(w for w in wedges[k] if (w[2], w[3]) == (bi, t))
            psi_lo = frames[k][0]
            a0 = psi_lo + a_rel
            angles = [a0 + span * d / m_div for d in range(m_div + 1)]
            P = [q[t] + rho * np.array([math.cos(a), math.sin(a)]) for a in angles]
            path = [m_t, ctr, m_p]  # m_div + 1 outer path points
            base = offsets[(bi, t)]
            for d in range(m_div):
                # bite arc on side 3 so the local frame stays right-handed:
                # axis 0 runs radially outward, axis 1 counterclockwise
                prov0 = (
                    ("boundary", arc_t)
                    if (d == 0 and arc_t is not None)
                    else ("interior", None)
                )
                prov2 = (
                    ("boundary", arc_p)
                    if (d == m_div - 1 and arc_p is not None)
                    else ("interior", None)
                )
                _emit_outer(
                    (
                        Segment(tuple(P[d]), tuple(path[d])),
                        Segment(tuple(path[d]), tuple(path[d + 1])),
                        Segment(tuple(P[d + 1]), tuple(path[d + 1])),
                        CircleEdge(tuple(q[t]), rho, angles[d], angles[d + 1]),
                    ),
                    [prov0, ("interior", None), prov2, ("ring", (k, base + d))],
                )

    n_outer = len(elements)

    # --- sector + core elements -----------------------------------------------
    nu = np.log(radii[1:])
    core_ids = {}
    sector_ids = {}
    for k in range(poly.p):
        lay = sectors[k]
        for i in range(lay.I):
            core = Element(
                id=len(elements), kind="core", vertex=k, layer=1, wedge=i, sector=lay
            )
            elements.append(core)
            core_ids[(k, i)] = core.id
            for j in range(2, M + 1):
                e = Element(
                    id=len(elements), kind="sector",
                    dom=((float(nu[j - 2]), float(nu[j - 1])),
                         (float(lay.psi[i]), float(lay.psi[i + 1]))),
                    vertex=k, layer=j, wedge=i, sector=lay,
                )
                elements.append(e)
                sector_ids[(k, i, j)] = e.id

    # --- edges ------------------------------------------------------------------
    edges: list[MeshEdge] = []

    def _add(**kw):
        edges.append(MeshEdge(id=len(edges), **kw))

    bc_of_arc = {
        i: ("dirichlet" if i in poly.dirichlet else "neumann") for i in range(poly.p)
    }

    for k in range(poly.p):
        lay = sectors[k]
        for i in range(lay.I):
            if M >= 2:
                _add(family="core_link", a=(sector_ids[(k, i, 2)], 3),
                     b=(core_ids[(k, i)], 1), vertex=k)
            for j in range(2, M):
                _add(family="sector_arc", a=(sector_ids[(k, i, j)], 1),
                     b=(sector_ids[(k, i, j + 1)], 3), vertex=k)
        for i in range(lay.I - 1):
            for j in range(2, M + 1):
                _add(family="sector_radial", a=(sector_ids[(k, i, j)], 2),
                     b=(sector_ids[(k, i + 1, j)], 0), vertex=k)
        for j in range(2, M + 1):
            arc_lo = k  # outgoing arc bounds the psi_lo side
            arc_hi = (k - 1) % poly.p
            _add(family="boundary", a=(sector_ids[(k, 0, j)], 0), bc=bc_of_arc[arc_lo],
                 arc=arc_lo, region="sector", vertex=k)
            _add(family="boundary", a=(sector_ids[(k, lay.I - 1, j)], 2), bc=bc_of_arc[arc_hi],
                 arc=arc_hi, region="sector", vertex=k)

    # ring + outer edges from the records
    ring_seen = {}
    interior_sides = {}
    for elem_id, side, tag, payload in side_records:
        if tag == "ring":
            ring_seen[payload] = (elem_id, side)
        elif tag == "boundary":
            _add(family="boundary", a=(elem_id, side), bc=bc_of_arc[payload],
                 arc=payload, region="outer")
        else:
            e = elements[elem_id]
            t_ends = e.side_points(side, np.array([0.0, 1.0]))
            p_ends = e.physical(t_ends)
            mid = e.physical(e.side_points(side, np.array([0.5])))[0]
            key = tuple(sorted([_node_key(p_ends[0], tol), _node_key(p_ends[1], tol)]))
            interior_sides.setdefault(key, []).append((elem_id, side, p_ends, mid))

    for k in range(poly.p):
        lay = sectors[k]
        for i in range(lay.I):
            if (k, i) not in ring_seen:
                raise MeshError(f"ring side missing for vertex {k}, wedge {i}")
            if M >= 2:
                _add(family="ring", a=(sector_ids[(k, i, M)], 1), b=ring_seen[(k, i)],
                     vertex=k)
            else:
                _add(family="ring", a=(core_ids[(k, i)], 1), b=ring_seen[(k, i)], vertex=k)

    for key, group in interior_sides.items():
        if len(group) != 2:
            raise MeshError(
                f"outer mesh edge shared by {len(group)} elements near {group[0][3]} "
                "(template conformity bug)"
            )
        (ea, sa, pa, ma), (eb, sb, pb, mb) = group
        if np.linalg.norm(ma - mb) > 10 * tol:
            raise MeshError(f"outer sides match endpoints but not midpoints near {ma}")
        flip = np.linalg.norm(pa[0] - pb[0]) > np.linalg.norm(pa[0] - pb[1])
        _add(family="outer", a=(ea, sa), b=(eb, sb), flip_b=bool(flip))

    # --- nodes --------------------------------------------------------------
    bank = _NodeBank(tol)
    elem_nodes = {}
    for e in elements:
        if e.kind == "core":
            continue
        if e.kind == "outer":
            pts = e.gh.corners
        else:
            pts = e.physical(e.local_corners())
        elem_nodes[e.id] = tuple(bank.get(p) for p in pts)
    ring2 = {}
    for k in range(poly.p):
        lay = sectors[k]
        ids = set()
        if M >= 2:
            for i in range(lay.I):
                e = elements[sector_ids[(k, i, 2)]]
                n0, n1, n2, n3 = elem_nodes[e.id]
                ids.update((n0, n3))  # corners at nu = nu_min (the sigma_2 circle)
        else:
            for i in range(lay.I):
                # no polynomial layers: the ring circle is the sector boundary rho
                pass
        ring2[k] = tuple(sorted(ids))

    mesh = Mesh(
        poly=poly, rho=rho, mu=mu, M=M, sectors=sectors,
        elements=elements, edges=edges,
        node_xy=np.array(bank.points) if bank.points else np.zeros((0, 2)),
        elem_nodes=elem_nodes, ring2_nodes=ring2,
    )
    _validate_mesh(mesh)
    return mesh


def _validate_mesh(mesh: Mesh, grid: int = 20):
    t = np.linspace(0.005, 0.995, grid)
    for e in mesh.elements:
        if e.kind == "outer":
            X, Y = np.meshgrid(t, t, indexing="ij")
            pts = np.column_stack([X.ravel(), Y.ravel()])
            J = e.gh.jac(pts)
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            if np.min(det) <= 0:
                raise MeshError(f"outer element {e.id} has a non-positive jacobian")
            if np.max(det) / np.min(det) > 1e6:
                raise MeshError(f"outer element {e.id} jacobian is badly conditioned")
        elif e.kind == "sector":
            (a0, b0), (a1, b1) = e.dom
            X, Y = np.meshgrid(a0 + t * (b0 - a0), a1 + t * (b1 - a1), indexing="ij")
            pts = np.column_stack([X.ravel(), Y.ravel()])
            b = e.sector.blend(pts)
            if np.min(b["th_phi"]) <= 0:
                raise MeshError(f"sector element {e.id} blend map is not orientation-preserving")


# ---------------------------------------------------------------------------
# single-element helper (unit square, identity map) for small direct solves

def single_square(side_bc: tuple[str, str, str, str] = ("dirichlet",) * 4) -> Mesh:
    from .geometry import line_arc

    vs = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    # element side s runs along boundary arc _SQ_SIDE_ARC[s]
    side_to_arc = (0, 1, 2, 3)
    arc_bc = {side_to_arc[s]: side_bc[s] for s in range(4)}
    sq = CurvilinearPolygon(
        vertices=vs,
        arcs=[line_arc(vs[i], vs[(i + 1) % 4]) for i in range(4)],
        dirichlet=frozenset(i for i in range(4) if arc_bc[i] == "dirichlet"),
        neumann=frozenset(i for i in range(4) if arc_bc[i] != "dirichlet"),
    )
    gh = GordonHallMap.from_sides(
        Segment((0, 0), (1, 0)), Segment((1, 0), (1, 1)),
        Segment((0, 1), (1, 1)), Segment((0, 0), (0, 1)),
    )
    e = Element(id=0, kind="outer", dom=((0.0, 1.0), (0.0, 1.0)), gh=gh)
    edges = [
        MeshEdge(id=s, family="boundary", a=(0, s), bc=side_bc[s],
                 arc=side_to_arc[s], region="outer")
        for s in range(4)
    ]
    bank = _NodeBank(1e-9)
    nodes = tuple(bank.get(p) for p in gh.corners)
    return Mesh(
        poly=sq, rho=0.0, mu=0.5, M=0, sectors={}, elements=[e], edges=edges,
        node_xy=np.array(bank.points), elem_nodes={0: nodes}, ring2_nodes={},
    )
