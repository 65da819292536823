"""Unknown-space management and least-squares solution paths.

The functional is assembled over the raw nonconforming layout (a Legendre
block per element plus one constant per vertex fan).  Solving happens on a
reduced space expressed as an affine map  raw = T z + shift:

* ``nonconforming``  -- z is the raw vector, minus any fan constants fixed
  from Dirichlet data;
* ``vertex_continuous`` -- each element block is rewritten in a hierarchical
  basis whose first coordinates are the element corner VALUES; corner
  coordinates meeting at a mesh node collapse to one shared unknown, and the
  nodes on each fan's inner circle collapse into that fan's constant;
* ``pi0`` -- same basis change, but every corner value (and fan constant) is
  pinned to zero.

The basis change is exact and sparse, preserves the PSD structure, and makes
the Schur partition (shared vertex values vs. everything else) immediate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .basis import TensorPolynomial, gll_rule, tensor_rule
from .errors import NumericalError, SpecError
from .functional import QuadraticSystem, RawLayout, raw_layout
from .mesh import Mesh

MODES = ("nonconforming", "vertex_continuous", "pi0")


# ---------------------------------------------------------------------------
# hierarchical corner basis in 1D: columns [value at left end, value at right
# end, interior bubbles P_k - matching endpoint combination]

def corner_split_1d(W: int) -> np.ndarray:
    """Change of basis on degree-W Legendre coefficients.

    New coordinates are (left endpoint value, right endpoint value,
    c_2 .. c_W); the matrix maps new coordinates to Legendre coefficients.
    Endpoint functions are e_lo = (P0 - P1)/2 and e_hi = (P0 + P1)/2; the
    bubble for P_k subtracts its endpoint values, so it vanishes at both
    ends.
    """
    if W < 1:
        raise SpecError("corner basis needs degree >= 1")
    C = np.zeros((W + 1, W + 1))
    C[0, 0], C[1, 0] = 0.5, -0.5
    C[0, 1], C[1, 1] = 0.5, 0.5
    for k in range(2, W + 1):
        C[k, k] = 1.0
        C[0, k] = -(((-1.0) ** k) + 1.0) / 2.0
        C[1, k] = (((-1.0) ** k) - 1.0) / 2.0
    return C


def corner_coord_ids(W: int) -> tuple[int, int, int, int]:
    """Flat new-coordinate indices of the four corner values, in the local
    corner order (a0,a1), (b0,a1), (b0,b1), (a0,b1)."""
    n = W + 1
    return (0, n, n + 1, 1)


# ---------------------------------------------------------------------------
# reduced layouts

@dataclass
class DofLayout:
    mode: str
    raw: RawLayout
    T: sp.csr_matrix  # (n_raw, n) selection of free-class columns
    shift: np.ndarray  # (n_raw,) fixed part
    n: int
    vertex_cols: np.ndarray  # z columns that are shared vertex values / fan constants
    interior_cols: np.ndarray
    info: dict

    def expand(self, z: np.ndarray) -> np.ndarray:
        return self.T @ z + self.shift


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def dirichlet_adjacent_vertices(poly) -> set:
    """Vertices with at least one incident Dirichlet arc (arc k runs from
    vertex k to vertex k+1)."""
    out = set()
    for i in poly.dirichlet:
        out.add(i)
        out.add((i + 1) % poly.p)
    return out


def build_layout(
    mesh: Mesh, W: int, mode: str, g_fixed: dict | None = None
) -> DofLayout:
    """Construct the affine reduction raw = T z + shift for one of the three
    unknown spaces.  ``g_fixed`` maps vertex index -> value for fan constants
    eliminated from boundary data (ignored in pi0 mode, which pins them to 0).
    """
    if mode not in MODES:
        raise SpecError(f"unknown layout mode {mode!r}; pick one of {MODES}")
    g_fixed = dict(g_fixed or {})
    raw = raw_layout(mesh, W)
    n_raw = raw.n
    nloc = (W + 1) ** 2

    # per-element basis change (identity for the nonconforming space)
    if mode == "nonconforming":
        B = sp.identity(n_raw, format="csr")
    else:
        C2 = np.kron(corner_split_1d(W), corner_split_1d(W))
        blocks = []
        for e in mesh.elements:
            if e.kind == "core":
                continue
            blocks.append(C2)
        blocks.append(np.eye(len(raw.gdof)))
        B = sp.block_diag(blocks, format="csr")

    # classes over the new coordinates
    n_nodes = len(mesh.node_xy)
    uf = _UnionFind(n_raw + n_nodes)

    def node_slot(nid: int) -> int:
        return n_raw + nid

    is_vertex_coord = np.zeros(n_raw, dtype=bool)
    for k, col in raw.gdof.items():
        is_vertex_coord[col] = True

    if mode in ("vertex_continuous", "pi0"):
        cids = corner_coord_ids(W)
        for e in mesh.poly_elements():
            base = raw.block[e.id]
            for node, ci in zip(mesh.elem_nodes[e.id], cids):
                is_vertex_coord[base + ci] = True
                if mode == "vertex_continuous":
                    uf.union(node_slot(node), base + ci)
        if mode == "vertex_continuous":
            for k, nodes in mesh.ring2_nodes.items():
                for nid in nodes:
                    uf.union(node_slot(nid), raw.gdof[k])

    # fixed values per class
    fixed: dict[int, float] = {}

    def fix(coord: int, value: float):
        root = uf.find(coord)
        if root in fixed and abs(fixed[root] - value) > 1e-12:
            raise SpecError(
                f"conflicting fixed values {fixed[root]} and {value} in one vertex class"
            )
        fixed[root] = value

    if mode == "pi0":
        for coord in np.nonzero(is_vertex_coord)[0]:
            fix(int(coord), 0.0)
    else:
        for k, val in g_fixed.items():
            if k not in raw.gdof:
                raise SpecError(f"vertex {k} has no fan constant to fix")
            fix(raw.gdof[k], float(val))

    # enumerate free classes in deterministic (first-member) order
    col_of_class: dict[int, int] = {}
    coord_col = np.full(n_raw, -1, dtype=int)
    coord_shift = np.zeros(n_raw)
    vertex_class = set()
    for coord in range(n_raw):
        root = uf.find(coord)
        if root in fixed:
            coord_shift[coord] = fixed[root]
            continue
        if root not in col_of_class:
            col_of_class[root] = len(col_of_class)
        coord_col[coord] = col_of_class[root]
        if is_vertex_coord[coord]:
            vertex_class.add(col_of_class[root])

    n_z = len(col_of_class)
    free = coord_col >= 0
    Tnew = sp.csr_matrix(
        (np.ones(int(free.sum())), (np.nonzero(free)[0], coord_col[free])),
        shape=(n_raw, n_z),
    )
    T = (B @ Tnew).tocsr()
    shift = B @ coord_shift

    vertex_cols = np.array(sorted(vertex_class), dtype=int)
    interior_cols = np.setdiff1d(np.arange(n_z), vertex_cols)
    n_fixed_coords = int((coord_col < 0).sum())
    info = {
        "n_raw": n_raw,
        "n_free": n_z,
        "n_fixed_coords": n_fixed_coords,
        "n_vertex_classes": len(vertex_cols),
        "n_identifications": n_raw - n_z - n_fixed_coords,
    }
    return DofLayout(
        mode=mode, raw=raw, T=T, shift=shift, n=n_z,
        vertex_cols=vertex_cols, interior_cols=interior_cols, info=info,
    )


# ---------------------------------------------------------------------------
# solve paths

@dataclass
class SolveResult:
    layout: DofLayout
    z: np.ndarray
    u: np.ndarray  # raw coefficient vector (T z + shift)
    info: dict


def reduce_system(Q: np.ndarray, b: np.ndarray, d: float, layout: DofLayout):
    """Push the quadratic form through the affine reduction."""
    T, s = layout.T, layout.shift
    A = np.asarray(T.T @ Q)  # (n, n_raw)
    Qz = np.asarray(T.T @ A.T)
    Qz = 0.5 * (Qz + Qz.T)
    bz = np.asarray(T.T @ (b - Q @ s))
    dz = float(s @ Q @ s - 2.0 * b @ s + d)
    return Qz, bz, dz


def _sym_solve(Q: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    if not len(b) or not np.any(b):
        return np.zeros(len(b))
    try:
        c = sla.cho_factor(Q, check_finite=False)
        z = sla.cho_solve(c, b, check_finite=False)
    except sla.LinAlgError:
        with warnings.catch_warnings():
            # the explicit residual test below decides pass/fail
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            z = sla.solve(Q, b, assume_a="sym", check_finite=False)
    res = np.linalg.norm(Q @ z - b) / max(1.0, np.linalg.norm(b))
    if not np.isfinite(res) or res > 1e-10:
        lo = float(sla.eigvalsh(Q, subset_by_index=[0, 0])[0])
        raise NumericalError(
            f"{what}: system numerically singular (relative residual {res:.2e}, "
            f"smallest eigenvalue ~ {lo:.3e})"
        )
    return z


def solve_least_squares(system: QuadraticSystem, layout: DofLayout) -> SolveResult:
    """Minimize the functional on the layout space by one dense symmetric solve."""
    Q, b, d = system.assemble()
    Qz, bz, dz = reduce_system(Q, b, d, layout)
    z = _sym_solve(Qz, bz, "least-squares solve")
    u = layout.expand(z)
    val = float(z @ Qz @ z - 2 * bz @ z + dz)
    return SolveResult(layout=layout, z=z, u=u, info={"functional": val, "path": "direct"})


def solve_schur(system: QuadraticSystem, layout: DofLayout) -> SolveResult:
    """Solve by eliminating the non-vertex coordinates first.

    The interior block gathers every per-element coordinate that is not a
    shared vertex value; jump terms couple interiors of neighbouring
    elements, so the block is factored as a whole and the small Schur
    complement lives on the shared vertex values and free fan constants.
    """
    if layout.mode != "vertex_continuous":
        raise SpecError("the Schur path needs a vertex_continuous layout")
    Q, b, d = system.assemble()
    Qz, bz, dz = reduce_system(Q, b, d, layout)
    ii, vv = layout.interior_cols, layout.vertex_cols
    Qii = Qz[np.ix_(ii, ii)]
    Qiv = Qz[np.ix_(ii, vv)]
    Qvv = Qz[np.ix_(vv, vv)]
    try:
        c = sla.cho_factor(Qii, check_finite=False)
    except sla.LinAlgError as exc:
        raise NumericalError(
            "interior (corner-vanishing) block is numerically singular; "
            "the reduced problem is not coercive at this size"
        ) from exc
    X = sla.cho_solve(c, Qiv, check_finite=False)
    S = Qvv - Qiv.T @ X
    rhs = bz[vv] - Qiv.T @ sla.cho_solve(c, bz[ii], check_finite=False)
    zv = _sym_solve(S, rhs, "Schur solve")
    zi = sla.cho_solve(c, bz[ii] - Qiv @ zv, check_finite=False)
    z = np.zeros(layout.n)
    z[ii] = zi
    z[vv] = zv
    u = layout.expand(z)
    val = float(z @ Qz @ z - 2 * bz @ z + dz)
    return SolveResult(
        layout=layout, z=z, u=u,
        info={"functional": val, "path": "schur", "schur_dim": len(vv)},
    )


# ---------------------------------------------------------------------------
# point evaluation

@dataclass
class EvalReport:
    values: np.ndarray  # one value per point (first owning element)
    hits: list  # per point: list of (element id, one-sided value)

    def spread(self, i: int) -> float:
        vals = [v for _, v in self.hits[i]]
        return max(vals) - min(vals)


def _invert_outer(gh, pt: np.ndarray, tol: float):
    """Damped Newton for local coordinates of a physical point; seeded from
    the nearest corner.  Returns local coords or None."""
    corners_loc = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    seed = corners_loc[np.argmin(np.linalg.norm(gh.corners - pt, axis=1))]
    w = seed.copy()
    r = gh.point(w[None, :])[0] - pt
    for _ in range(60):
        if np.linalg.norm(r) <= tol:
            break
        J = gh.jac(w[None, :])[0]
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return None
        lam = 1.0
        for _ in range(30):
            wn = np.clip(w + lam * step, -0.5, 1.5)
            rn = gh.point(wn[None, :])[0] - pt
            if np.linalg.norm(rn) < np.linalg.norm(r):
                w, r = wn, rn
                break
            lam *= 0.5
        else:
            return None
    if np.linalg.norm(r) > tol:
        return None
    return w


def evaluate_solution(
    mesh: Mesh, raw: RawLayout, u_raw: np.ndarray, points, loc_tol: float = 1e-9
) -> EvalReport:
    """Evaluate the raw solution at physical points.

    Fan disks return the fan constant; sector layers invert the chart in
    closed form; outer elements invert their transfinite map by damped
    Newton.  Points owned by several elements (on shared edges) carry every
    one-sided value in ``hits``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    scale = max(1.0, mesh.poly.scale()) if mesh.poly is not None else 1.0
    newton_tol = 1e-12 * scale

    sector_elem = {}
    for e in mesh.elements:
        if e.kind in ("sector", "core"):
            sector_elem[(e.vertex, e.wedge, e.layer)] = e

    values = np.zeros(len(pts))
    hits_all = []
    for ip, pt in enumerate(pts):
        hits = []
        for k, lay in mesh.sectors.items():
            dx = pt - lay.center
            r = float(np.hypot(dx[0], dx[1]))
            if r > lay.rho * (1 + loc_tol):
                continue
            theta = float(np.arctan2(dx[1], dx[0]))
            f0, f1 = float(lay.f_lo.value(r)), float(lay.f_hi.value(r))
            rel = (theta - f0) % (2 * np.pi)
            if rel > (f1 - f0) + loc_tol * 2 * np.pi:
                continue
            rel = min(rel, f1 - f0)
            phi = lay.psi_lo + (lay.psi_hi - lay.psi_lo) * (
                rel / (f1 - f0) if f1 > f0 else 0.0
            )
            if r <= lay.radii[1] * (1 + loc_tol):
                gcol = raw.gdof[k]
                hits.append((sector_elem[(k, 0, 1)].id, float(u_raw[gcol])))
            if r < lay.radii[1] * (1 - loc_tol) or lay.M < 2:
                continue
            # every (layer, wedge) cell containing (log r, phi) up to tolerance,
            # so points on internal fan edges report each one-sided value
            nu = np.log(max(r, lay.radii[1]))
            layers = [
                j for j in range(2, lay.M + 1)
                if lay.nu[j - 2] - loc_tol <= nu <= lay.nu[j - 1] + loc_tol
            ]
            wedges = [
                i for i in range(lay.I)
                if lay.psi[i] - loc_tol <= phi <= lay.psi[i + 1] + loc_tol
            ]
            for j in layers:
                for i in wedges:
                    e = sector_elem[(k, i, j)]
                    poly = TensorPolynomial.from_flat(
                        u_raw[raw.element_idx(e.id)], raw.W, e.dom
                    )
                    w = np.array([
                        np.clip(nu, e.dom[0][0], e.dom[0][1]),
                        np.clip(phi, e.dom[1][0], e.dom[1][1]),
                    ])
                    hits.append((e.id, float(poly.eval(w))))
        for e in mesh.elements:
            if e.kind != "outer":
                continue
            box_lo = e.gh.corners.min(axis=0) - 0.3 * scale
            box_hi = e.gh.corners.max(axis=0) + 0.3 * scale
            if np.any(pt < box_lo) or np.any(pt > box_hi):
                continue
            w = _invert_outer(e.gh, pt, newton_tol)
            if w is None or np.any(w < -loc_tol) or np.any(w > 1 + loc_tol):
                continue
            poly = TensorPolynomial.from_flat(u_raw[raw.element_idx(e.id)], raw.W, e.dom)
            hits.append((e.id, float(poly.eval(np.clip(w, 0.0, 1.0)))))
        if not hits:
            raise SpecError(f"point {pt.tolist()} lies outside the meshed domain")
        hits.sort()
        values[ip] = hits[0][1]
        hits_all.append(hits)
    return EvalReport(values=values, hits=hits_all)


# ---------------------------------------------------------------------------
# corner-vanishing Poincare sampler (property suite for the interior block)

def h2_poincare_ratio(u: TensorPolynomial) -> float:
    """||u||_0^2 / (|u|_1^2 + |u|_2^2) on u's own domain, by exact quadrature
    (mixed second derivative counted once)."""
    pts, wts = tensor_rule(u.dom, u.W + 2, kind="gll")
    l0 = float(wts @ u.eval(pts) ** 2)
    l1 = float(wts @ (u.eval(pts, 1, 0) ** 2 + u.eval(pts, 0, 1) ** 2))
    l2 = float(
        wts
        @ (u.eval(pts, 2, 0) ** 2 + u.eval(pts, 1, 1) ** 2 + u.eval(pts, 0, 2) ** 2)
    )
    return l0 / (l1 + l2)


def poincare_ratios(
    W: int, n_samples: int, seed: int, dom=((0.0, 1.0), (0.0, 1.0))
) -> np.ndarray:
    """Empirical ratios ||u||_0^2 / (|u|_1^2 + |u|_2^2) for random degree-W
    tensor polynomials with all four corner values forced to zero."""
    if W < 2:
        raise SpecError("corner-vanishing samples need W >= 2")
    rng = np.random.default_rng(seed)
    C2 = np.kron(corner_split_1d(W), corner_split_1d(W))
    cids = corner_coord_ids(W)
    out = np.empty(n_samples)
    for s in range(n_samples):
        z = rng.standard_normal((W + 1) ** 2)
        for ci in cids:
            z[ci] = 0.0
        out[s] = h2_poincare_ratio(TensorPolynomial.from_flat(C2 @ z, W, dom))
    return out
