"""Built-in domains and manufactured cases for the convergence/stability harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .errors import SpecError
from .functional import ProblemData
from .geometry import CurvilinearPolygon, line_arc
from .operators import CoefficientField
from .probspec import ProblemSpec
from .solver import dirichlet_adjacent_vertices


def polygon_from_vertices(vertices, dirichlet=None, neumann=None) -> CurvilinearPolygon:
    """Straight-sided polygon; arc i joins vertices[i] -> vertices[i+1] (mod p)."""
    vertices = np.asarray(vertices, dtype=float)
    p = len(vertices)
    arcs = [line_arc(vertices[i], vertices[(i + 1) % p]) for i in range(p)]
    if dirichlet is None and neumann is None:
        dirichlet = range(p)
    dirichlet = frozenset(dirichlet or ())
    neumann = frozenset(neumann if neumann is not None else set(range(p)) - set(dirichlet))
    poly = CurvilinearPolygon(vertices, arcs, dirichlet, neumann)
    poly.validate()
    return poly


def square_domain(dirichlet=None, neumann=None) -> CurvilinearPolygon:
    """Unit square (0,1)^2, all-Dirichlet by default."""
    return polygon_from_vertices(
        [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], dirichlet, neumann
    )


LSHAPE_VERTICES = np.array(
    [[1.0, 0.0], [1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [0.0, -1.0], [0.0, 0.0]]
)
# arc i joins vertex i to i+1; arcs 4 ((0,-1)->(0,0)) and 5 ((0,0)->(1,0))
# are the two legs meeting at the re-entrant corner
LSHAPE_REENTRANT_ARCS = (4, 5)
LSHAPE_REENTRANT_VERTEX = 5


def lshape_domain(neumann=()) -> CurvilinearPolygon:
    """L-shaped domain (-1,1)^2 minus the fourth quadrant, re-entrant corner at 0."""
    neumann = frozenset(neumann)
    dirichlet = frozenset(range(6)) - neumann
    return polygon_from_vertices(LSHAPE_VERTICES, dirichlet, neumann)


# ---------------------------------------------------------------------------
# manufactured cases
# ---------------------------------------------------------------------------


@dataclass
class ManufacturedCase:
    """A problem spec paired with its exact solution.

    ``u``/``grad``/``hess`` are vectorized closures taking an (n, 2) point
    array; ``hess`` returns (n, 3) columns (u_xx, u_xy, u_yy).  ``regularity``
    is "analytic" for every built-in (their data are analytic even when the
    solution is singular); ``alpha`` records the power of the leading corner
    singularity when there is one.
    """

    name: str
    spec: ProblemSpec
    u: object
    grad: object
    hess: object
    regularity: str = "analytic"
    alpha: float | None = None

    def polygon(self) -> CurvilinearPolygon:
        return self.spec.polygon()

    def field(self) -> CoefficientField:
        return self.spec.field()

    def data(self) -> ProblemData:
        return self.spec.problem_data()

    def vertex_values(self) -> np.ndarray:
        """Exact solution at the polygon vertices (the corner dof targets)."""
        return np.asarray(self.u(np.asarray(self.spec.vertices, dtype=float)))

    def g_fixed(self) -> dict:
        """Corner values to pin: every vertex touching a Dirichlet arc."""
        vals = self.vertex_values()
        keep = dirichlet_adjacent_vertices(self.polygon())
        return {k: float(vals[k]) for k in sorted(keep)}

    def check(self, n=100, seed=20260818, tol=1e-10) -> None:
        consistency_check(self, n=n, seed=seed, tol=tol)


def _power_closures(alpha: float, theta):
    """u = r^alpha sin(alpha*theta) with theta(x, y) a branch of the polar angle."""

    def u(p):
        x, y = p[:, 0], p[:, 1]
        r2 = x * x + y * y
        return r2 ** (0.5 * alpha) * np.sin(alpha * theta(x, y))

    def grad(p):
        x, y = p[:, 0], p[:, 1]
        r2 = x * x + y * y
        th = theta(x, y)
        a = alpha * r2 ** (0.5 * (alpha - 1))
        return np.stack([a * np.sin((alpha - 1) * th), a * np.cos((alpha - 1) * th)], -1)

    def hess(p):
        x, y = p[:, 0], p[:, 1]
        r2 = x * x + y * y
        th = theta(x, y)
        a = alpha * (alpha - 1) * r2 ** (0.5 * (alpha - 2))
        uxx = a * np.sin((alpha - 2) * th)
        return np.stack([uxx, a * np.cos((alpha - 2) * th), -uxx], -1)

    return u, grad, hess


def _lshape_theta(x, y):
    # angle in [0, 2pi) measured from the positive x-axis leg, cut along the leg
    return np.pi + np.arctan2(-y, -x)


def _spec(vertices, dirichlet, neumann, coefficients, f, g0, g1,
          M=3, W=3, mu=0.15, rho=0.2, mode="vertex_continuous") -> ProblemSpec:
    p = len(vertices)
    return ProblemSpec.from_dict({
        "version": 1,
        "vertices": [list(map(float, v)) for v in vertices],
        "arcs": [{"kind": "line"} for _ in range(p)],
        "dirichlet": [a + 1 for a in dirichlet],
        "neumann": [a + 1 for a in neumann],
        "coefficients": coefficients,
        "data": {"f": f,
                 "g0": {str(a + 1): s for a, s in g0.items()},
                 "g1": {str(a + 1): s for a, s in g1.items()}},
        "discretization": {"M": M, "W": W, "mu": mu, "rho": rho, "I": None},
        "mode": mode,
    })


_SQUARE = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
_LSHAPE_RZ_U = "(x^2 + y^2)^(1/3) * sin((2/3)*atan2(-y, -x) + (2/3)*pi)"

BUILTIN_CASE_NAMES = (
    "square_smooth", "lshape_rz", "lshape_mixed", "square_varcoef", "wedge_alpha",
)


def _case_square_smooth() -> ManufacturedCase:
    pi = np.pi

    def u(p):
        return np.sin(pi * p[:, 0]) * np.sin(pi * p[:, 1])

    def grad(p):
        sx, cx = np.sin(pi * p[:, 0]), np.cos(pi * p[:, 0])
        sy, cy = np.sin(pi * p[:, 1]), np.cos(pi * p[:, 1])
        return np.stack([pi * cx * sy, pi * sx * cy], -1)

    def hess(p):
        sx, cx = np.sin(pi * p[:, 0]), np.cos(pi * p[:, 0])
        sy, cy = np.sin(pi * p[:, 1]), np.cos(pi * p[:, 1])
        lap = -pi * pi * sx * sy
        return np.stack([lap, pi * pi * cx * cy, lap], -1)

    spec = _spec(_SQUARE, range(4), (), {},
                 f="2*pi^2 * sin(pi*x) * sin(pi*y)",
                 g0={a: "0" for a in range(4)}, g1={})
    return ManufacturedCase("square_smooth", spec, u, grad, hess)


def _case_lshape_rz() -> ManufacturedCase:
    u, grad, hess = _power_closures(2.0 / 3.0, _lshape_theta)
    # the two legs meeting at the re-entrant corner carry homogeneous data
    g0 = {a: _LSHAPE_RZ_U for a in range(4)}
    g0.update({a: "0" for a in LSHAPE_REENTRANT_ARCS})
    spec = _spec(LSHAPE_VERTICES, range(6), (), {}, f="0", g0=g0, g1={})
    return ManufacturedCase("lshape_rz", spec, u, grad, hess, alpha=2.0 / 3.0)


def _case_lshape_mixed() -> ManufacturedCase:
    u, grad, hess = _power_closures(2.0 / 3.0, _lshape_theta)
    # conormal du/dN = -(2/3) r^{-1/3} on both legs (outward normals (1,0), (0,-1))
    g1 = {a: "-(2/3)*(x^2 + y^2)^(-1/6)" for a in LSHAPE_REENTRANT_ARCS}
    g0 = {a: _LSHAPE_RZ_U for a in range(4)}
    spec = _spec(LSHAPE_VERTICES, range(4), LSHAPE_REENTRANT_ARCS, {},
                 f="0", g0=g0, g1=g1)
    return ManufacturedCase("lshape_mixed", spec, u, grad, hess, alpha=2.0 / 3.0)


def _case_square_varcoef() -> ManufacturedCase:
    def u(p):
        x, y = p[:, 0], p[:, 1]
        return x * x * y + x * y * y

    def grad(p):
        x, y = p[:, 0], p[:, 1]
        return np.stack([2 * x * y + y * y, x * x + 2 * x * y], -1)

    def hess(p):
        x, y = p[:, 0], p[:, 1]
        return np.stack([2 * y, 2 * (x + y), 2 * x], -1)

    coeffs = {"a11": "1 + 0.3*x^2", "a12": "0.1*x*y", "a22": "1 + 0.2*y^2",
              "b1": "0.5", "b2": "-0.25", "c": "1"}
    # f = -div(A grad u) + b . grad u + c u, expanded by hand
    f = ("-(0.6*x*(2*x*y + y^2) + (1 + 0.3*x^2)*(2*y)"
         " + 0.1*y*(x^2 + 2*x*y) + 0.2*x*y*(2*x + 2*y)"
         " + 0.1*x*(2*x*y + y^2)"
         " + 0.4*y*(x^2 + 2*x*y) + (1 + 0.2*y^2)*(2*x))"
         " + 0.5*(2*x*y + y^2) - 0.25*(x^2 + 2*x*y) + x^2*y + x*y^2")
    g0 = {0: "0", 1: "y + y^2", 2: "x^2 + x", 3: "0"}
    spec = _spec(_SQUARE, range(4), (), coeffs, f=f, g0=g0, g1={})
    return ManufacturedCase("square_varcoef", spec, u, grad, hess)


def _case_wedge_alpha(alpha: float) -> ManufacturedCase:
    alpha = float(alpha)
    if alpha <= 0:
        raise SpecError(f"wedge_alpha needs a positive exponent, got {alpha}")
    def theta(x, y):
        return np.arctan2(y, x)

    u, grad, hess = _power_closures(alpha, theta)
    uexpr = f"(x^2 + y^2)^({0.5 * alpha!r}) * sin({alpha!r}*atan2(y, x))"
    g0 = {0: "0", 1: uexpr, 2: uexpr, 3: uexpr}
    spec = _spec(_SQUARE, range(4), (), {}, f="0", g0=g0, g1={})
    return ManufacturedCase("wedge_alpha", spec, u, grad, hess, alpha=alpha)


def builtin_case(name: str, alpha: float = 2.0 / 3.0) -> ManufacturedCase:
    """One of the named manufactured cases; alpha applies to wedge_alpha only."""
    if name == "square_smooth":
        return _case_square_smooth()
    if name == "lshape_rz":
        return _case_lshape_rz()
    if name == "lshape_mixed":
        return _case_lshape_mixed()
    if name == "square_varcoef":
        return _case_square_varcoef()
    if name == "wedge_alpha":
        return _case_wedge_alpha(alpha)
    raise SpecError(f"unknown case {name!r} (expected one of {BUILTIN_CASE_NAMES})")


# ---------------------------------------------------------------------------
# data-consistency spot check
# ---------------------------------------------------------------------------


def _inside_polyline(chain: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Even-odd crossing test against a closed polyline; (k,) bool."""
    x0, y0 = chain[:, 0], chain[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    px = pts[:, 0][:, None]
    py = pts[:, 1][:, None]
    straddles = (y0 > py) != (y1 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_hit = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    crossings = np.sum(straddles & (px < x_hit), axis=1)
    return crossings % 2 == 1


def _boundary_chain(poly: CurvilinearPolygon, per_arc=64) -> np.ndarray:
    s = np.linspace(-1.0, 1.0, per_arc + 1)[:-1]
    return np.concatenate([arc.point(s) for arc in poly.arcs])


def interior_points(poly: CurvilinearPolygon, n: int, rng,
                    margin_frac: float = 1e-2) -> np.ndarray:
    """Uniform interior samples kept a safe margin away from the boundary."""
    chain = _boundary_chain(poly)
    lo, hi = chain.min(axis=0), chain.max(axis=0)
    margin = margin_frac * max(poly.scale(), 1e-30)
    stencil = margin * np.array([[1, 0], [-1, 0], [0, 1], [0, -1]])
    out = []
    for _ in range(200):
        cand = rng.uniform(lo, hi, size=(4 * n, 2))
        ok = _inside_polyline(chain, cand)
        for shift in stencil:
            ok &= _inside_polyline(chain, cand + shift)
        out.append(cand[ok])
        if sum(len(c) for c in out) >= n:
            break
    pts = np.concatenate(out) if out else np.empty((0, 2))
    if len(pts) < n:
        raise SpecError("could not sample enough interior points; is the polygon degenerate?")
    return pts[:n]


def _residual_at(case: ManufacturedCase, field: CoefficientField, pts: np.ndarray):
    """f - L u_exact at interior points, with L expanded in non-divergence form."""
    x, y = pts[:, 0], pts[:, 1]
    A = field.matrix_at(x, y)
    dAx, dAy = field.matrix_gradients_at(x, y)
    b = field.vector_at(x, y)
    c = np.broadcast_to(field.c.eval(x, y), x.shape)
    g = np.asarray(case.grad(pts))
    H = np.asarray(case.hess(pts))
    Lu = (
        -(A[:, 0, 0] * H[:, 0] + 2 * A[:, 0, 1] * H[:, 1] + A[:, 1, 1] * H[:, 2])
        - (dAx[:, 0, 0] + dAy[:, 0, 1]) * g[:, 0]
        - (dAx[:, 0, 1] + dAy[:, 1, 1]) * g[:, 1]
        + b[:, 0] * g[:, 0] + b[:, 1] * g[:, 1] + c * np.asarray(case.u(pts))
    )
    fv = np.broadcast_to(case.data().f.eval(x, y), x.shape)
    return fv, Lu


def consistency_check(case: ManufacturedCase, n: int = 100, seed: int = 20260818,
                      tol: float = 1e-10) -> None:
    """Spot-check that the case data really belong to its exact solution.

    Verifies f = L u at ``n`` random interior points and the boundary data
    against traces of u (values on Dirichlet arcs, conormal derivative on
    Neumann arcs) at random points of every arc.  Raises SpecError on the
    first mismatch.
    """
    rng = np.random.default_rng(seed)
    poly = case.polygon()
    field = case.field()
    data = case.data()

    pts = interior_points(poly, n, rng)
    fv, Lu = _residual_at(case, field, pts)
    scale = max(1.0, float(np.max(np.abs(fv))))
    worst = float(np.max(np.abs(fv - Lu)))
    if not worst <= tol * scale:
        raise SpecError(
            f"case {case.name}: interior data inconsistent, "
            f"max |f - Lu| = {worst:.3e} over {n} points (tol {tol * scale:.1e})"
        )

    m = max(8, math.ceil(n / poly.p))
    for a, arc in enumerate(poly.arcs):
        s = rng.uniform(-0.98, 0.98, size=m)
        bpts = arc.point(s)
        if a in poly.dirichlet:
            g0v = np.broadcast_to(data.g0_for(a).eval(bpts[:, 0], bpts[:, 1]), s.shape)
            uv = np.asarray(case.u(bpts))
            err = float(np.max(np.abs(g0v - uv)))
            ref = max(1.0, float(np.max(np.abs(uv))))
            kind = "Dirichlet"
        else:
            tang = arc.deriv(s, 1)
            nrm = np.stack([tang[:, 1], -tang[:, 0]], -1)
            nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
            A = field.matrix_at(bpts[:, 0], bpts[:, 1])
            flux = np.einsum("np,npq,nq->n", nrm, A, np.asarray(case.grad(bpts)))
            g1v = np.broadcast_to(data.g1_for(a).eval(bpts[:, 0], bpts[:, 1]), s.shape)
            err = float(np.max(np.abs(g1v - flux)))
            ref = max(1.0, float(np.max(np.abs(flux))))
            kind = "Neumann"
        if not err <= tol * ref:
            raise SpecError(
                f"case {case.name}: {kind} data on arc {a + 1} does not match the "
                f"exact solution trace (max error {err:.3e}, tol {tol * ref:.1e})"
            )
