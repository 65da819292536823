"""Domain geometry: boundary arcs, curvilinear polygons, polar angle functions.

A domain is a simple closed curvilinear polygon: vertices A_0..A_{p-1} in
counterclockwise order, with analytic arcs; ``arcs[i]`` joins vertices[i] to
vertices[(i+1) % p], parameterized over s in [-1, 1].  Each arc is either a
Dirichlet or a Neumann piece.

Near a vertex the two incident arcs are rewritten in polar form about the
vertex: r -> angle.  For straight arcs that angle is constant; for curved arcs
it is computed by root-finding on the radius, with first and second
derivatives obtained by implicit differentiation of the arc expressions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import expr as ex
from .errors import MeshError, SpecError

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# boundary arcs (parameter s in [-1, 1])

@dataclass
class Arc:
    x: ex.Node
    y: ex.Node
    straight_hint: bool | None = None
    _d: dict = field(default_factory=dict, repr=False)

    def _trees(self, order: int):
        if order not in self._d:
            if order == 0:
                self._d[0] = (self.x, self.y)
            else:
                px, py = self._trees(order - 1)
                self._d[order] = (ex.diff(px, 0), ex.diff(py, 0))
        return self._d[order]

    def point(self, s):
        return self.deriv(s, 0)

    def deriv(self, s, order: int):
        tx, ty = self._trees(order)
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.stack(
            [np.broadcast_to(np.asarray(tx.eval(s)), s.shape),
             np.broadcast_to(np.asarray(ty.eval(s)), s.shape)],
            axis=-1,
        )
        return out

    @property
    def is_straight(self) -> bool:
        if self.straight_hint is not None:
            return self.straight_hint
        s = np.linspace(-1, 1, 33)
        d2 = self.deriv(s, 2)
        d1 = self.deriv(s, 1)
        scale = max(float(np.max(np.abs(d1))), 1e-30)
        self.straight_hint = bool(np.max(np.abs(d2)) <= 1e-10 * scale)
        return self.straight_hint


def line_arc(p, q) -> Arc:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    half_sum = 0.5 * (p + q)
    half_dif = 0.5 * (q - p)
    s = ex.var(0, "s")
    return Arc(
        x=ex.add(ex.num(half_sum[0]), ex.mul(ex.num(half_dif[0]), s)),
        y=ex.add(ex.num(half_sum[1]), ex.mul(ex.num(half_dif[1]), s)),
        straight_hint=True,
    )


def circle_arc(center, radius: float, ang0: float, ang1: float) -> Arc:
    c = np.asarray(center, dtype=float)
    s = ex.var(0, "s")
    ang = ex.add(ex.num(0.5 * (ang0 + ang1)), ex.mul(ex.num(0.5 * (ang1 - ang0)), s))
    return Arc(
        x=ex.add(ex.num(c[0]), ex.mul(ex.num(radius), ex.cos(ang))),
        y=ex.add(ex.num(c[1]), ex.mul(ex.num(radius), ex.sin(ang))),
        straight_hint=False,
    )


def expr_arc(x_text: str, y_text: str) -> Arc:
    return Arc(x=ex.parse(x_text, ("s",)), y=ex.parse(y_text, ("s",)))


# ---------------------------------------------------------------------------
# polygon

def _segments_intersect(p1, p2, q1, q2) -> np.ndarray:
    """Vectorized proper-intersection test between segment batches."""
    def cross(o, a, b):
        return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (
            a[..., 1] - o[..., 1]
        ) * (b[..., 0] - o[..., 0])

    d1 = cross(q1, q2, p1)
    d2 = cross(q1, q2, p2)
    d3 = cross(p1, p2, q1)
    d4 = cross(p1, p2, q2)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


@dataclass
class CurvilinearPolygon:
    vertices: np.ndarray
    arcs: list[Arc]
    dirichlet: frozenset[int]
    neumann: frozenset[int]

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.dirichlet = frozenset(self.dirichlet)
        self.neumann = frozenset(self.neumann)

    @property
    def p(self) -> int:
        return len(self.arcs)

    def scale(self) -> float:
        return float(np.max(np.abs(self.vertices - self.vertices.mean(axis=0))))

    # -- orientation helpers ------------------------------------------------

    def out_tangent(self, k: int) -> np.ndarray:
        """Unit tangent of the boundary leaving vertex k along arc k."""
        t = self.arcs[k].deriv(-1.0, 1)[0]
        return t / np.linalg.norm(t)

    def back_tangent(self, k: int) -> np.ndarray:
        """Unit direction from vertex k backwards along arc k-1."""
        t = -self.arcs[(k - 1) % self.p].deriv(1.0, 1)[0]
        return t / np.linalg.norm(t)

    def interior_angle(self, k: int) -> float:
        a_out = math.atan2(*self.out_tangent(k)[::-1])
        a_back = math.atan2(*self.back_tangent(k)[::-1])
        return (a_back - a_out) % TWO_PI

    def sector_frame(self, k: int) -> tuple[float, float]:
        """(psi_lo, psi_hi): angular window at vertex k, lower edge on arc k."""
        psi_lo = math.atan2(*self.out_tangent(k)[::-1])
        return psi_lo, psi_lo + self.interior_angle(k)

    # -- validation ----------------------------------------------------------

    def validate(self, curve_bound: tuple[float, float] | None = None):
        p = self.p
        if p < 3:
            raise SpecError(f"polygon needs at least 3 arcs, got {p}")
        if self.vertices.shape != (p, 2):
            raise SpecError("vertex array must be (p, 2) matching the arc count")
        scale = max(self.scale(), 1e-30)

        for i, arc in enumerate(self.arcs):
            a = arc.point(-1.0)[0]
            b = arc.point(1.0)[0]
            va, vb = self.vertices[i], self.vertices[(i + 1) % p]
            if np.linalg.norm(a - va) > 1e-12 * scale or np.linalg.norm(b - vb) > 1e-12 * scale:
                raise SpecError(f"arc {i + 1} endpoints do not match its vertices")
            d1 = arc.deriv(np.linspace(-1, 1, 65), 1)
            if np.min(np.einsum("ij,ij->i", d1, d1)) < 1e-12 * scale**2:
                raise SpecError(f"arc {i + 1} is degenerate (vanishing tangent)")

        all_idx = set(range(p))
        if set(self.dirichlet) | set(self.neumann) != all_idx or set(self.dirichlet) & set(self.neumann):
            raise SpecError(
                "dirichlet/neumann arc sets must partition the boundary "
                f"(got D={sorted(self.dirichlet)}, N={sorted(self.neumann)}, p={p})"
            )

        for k in range(p):
            w = self.interior_angle(k)
            if not (1e-9 < w < TWO_PI - 1e-9):
                raise SpecError(f"vertex {k} has degenerate interior angle {w:.3e}")

        self._check_simple(scale)
        if curve_bound is not None:
            self.check_derivative_bound(*curve_bound)

    def _check_simple(self, scale: float):
        # two coprime-ish sampling resolutions so a crossing cannot hide by
        # landing exactly on a sample node of the strict intersection test
        for samples in (48, 53):
            s = np.linspace(-1, 1, samples + 1)
            chains = [arc.point(s) for arc in self.arcs]
            p = self.p
            for i in range(p):
                for j in range(i + 1, p):
                    pi, pj = chains[i], chains[j]
                    a1 = pi[:-1][:, None, :]
                    a2 = pi[1:][:, None, :]
                    b1 = pj[None, :-1, :]
                    b2 = pj[None, 1:, :]
                    hits = _segments_intersect(a1, a2, b1, b2)
                    # the two segments meeting at a shared vertex can register a
                    # microscopic crossing when the arc formulas reproduce that
                    # vertex to within an ulp only; mask just that pair
                    if j == i + 1:
                        hits[-1, 0] = False
                    if i == 0 and j == p - 1:
                        hits[0, -1] = False
                    if np.any(hits):
                        raise SpecError(
                            f"boundary is not simple: arcs {i + 1} and {j + 1} cross"
                        )

    def check_derivative_bound(self, C: float, L: float, samples: int = 25):
        """Sampled factorial-growth bound on arc derivatives, by finite differencing."""
        s = np.linspace(-0.95, 0.95, samples)
        h = 1e-4
        for i, arc in enumerate(self.arcs):
            f = lambda t: arc.point(t)
            d1 = (f(s + h) - f(s - h)) / (2 * h)
            d2 = (f(s + h) - 2 * f(s) + f(s - h)) / h**2
            d3 = (f(s + 2 * h) - 2 * f(s + h) + 2 * f(s - h) - f(s - 2 * h)) / (2 * h**3)
            for t, d in ((1, d1), (2, d2), (3, d3)):
                bound = C * L**t * math.factorial(t)
                worst = float(np.max(np.abs(d)))
                if worst > bound:
                    raise SpecError(
                        f"arc {i + 1} violates the derivative growth bound: "
                        f"|d^{t}| ~ {worst:.3e} > {bound:.3e}"
                    )


# ---------------------------------------------------------------------------
# polar angle functions about a vertex

class AngleFunction:
    """Angle of a boundary arc as a function of distance r from a vertex."""

    def value(self, r):
        raise NotImplementedError

    def d1(self, r):
        raise NotImplementedError

    def d2(self, r):
        raise NotImplementedError


class ConstantAngle(AngleFunction):
    def __init__(self, psi: float):
        self.psi = float(psi)

    def value(self, r):
        return np.full_like(np.asarray(r, dtype=float), self.psi)

    def d1(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    d2 = d1


class ArcAngle(AngleFunction):
    """Polar reparameterization of a curved arc about a vertex.

    ``vertex_end`` is the arc parameter at the vertex (-1 for the outgoing
    arc, +1 for the incoming one).  Radii are resolved to arc parameters by
    bracketed root-finding on r(s); angles are unwrapped toward the tangent
    angle ``ref_angle`` at the vertex.
    """

    NSAMP = 512

    def __init__(self, arc: Arc, vertex: np.ndarray, vertex_end: int, ref_angle: float, r_max: float):
        self.arc = arc
        self.vertex = np.asarray(vertex, dtype=float)
        self.vertex_end = int(vertex_end)
        self.ref_angle = float(ref_angle)
        self.r_max = float(r_max)
        s0, s1 = (-1.0, 1.0) if vertex_end == -1 else (1.0, -1.0)
        grid = s0 + (s1 - s0) * np.linspace(1e-9, 1.0, self.NSAMP)
        v = self.arc.point(grid) - self.vertex
        r = np.hypot(v[:, 0], v[:, 1])
        theta = np.unwrap(np.arctan2(v[:, 1], v[:, 0]))
        theta += TWO_PI * np.round((self.ref_angle - theta[0]) / TWO_PI)
        if abs(theta[0] - self.ref_angle) > 0.5:
            raise MeshError("polar reparameterization failed: angle does not approach the tangent")
        k = np.argmax(r >= self.r_max) if np.any(r >= self.r_max) else len(r)
        if k == 0:
            raise MeshError("arc too short for the requested sector radius")
        self._s = grid[: k + 1] if k < len(r) else grid
        self._r = r[: k + 1] if k < len(r) else r
        self._theta = theta[: k + 1] if k < len(r) else theta
        if np.any(np.diff(self._r) <= 0):
            raise MeshError("arc radius is not monotone within the sector radius")

    def _param_of_radius(self, r: float) -> float:
        if not (0 < r <= self._r[-1] * (1 + 1e-12)):
            raise MeshError(f"radius {r:.3e} outside the reparameterized range")
        idx = int(np.searchsorted(self._r, r))
        if idx == 0:
            lo_s, hi_s = (self.vertex_end * 1.0, self._s[0])
            lo_s = float(self.vertex_end)
            hi_s = float(self._s[0])
        else:
            lo_s = float(self._s[idx - 1])
            hi_s = float(self._s[min(idx, len(self._s) - 1)])
        if lo_s == hi_s:
            return lo_s
        fn = lambda s: float(np.linalg.norm(self.arc.point(s)[0] - self.vertex)) - r
        return brentq(fn, lo_s, hi_s, xtol=1e-15, rtol=8.9e-16)

    def _geom(self, r_arr):
        r_arr = np.atleast_1d(np.asarray(r_arr, dtype=float))
        ss = np.array([self._param_of_radius(float(r)) for r in r_arr])
        v = self.arc.point(ss) - self.vertex
        v1 = self.arc.deriv(ss, 1)
        v2 = self.arc.deriv(ss, 2)
        r = np.hypot(v[:, 0], v[:, 1])
        rp = np.einsum("ij,ij->i", v, v1) / r
        rpp = (np.einsum("ij,ij->i", v1, v1) + np.einsum("ij,ij->i", v, v2) - rp**2) / r
        w = v[:, 0] * v1[:, 1] - v[:, 1] * v1[:, 0]
        wp = v[:, 0] * v2[:, 1] - v[:, 1] * v2[:, 0]
        tp = w / r**2
        tpp = (wp * r**2 - w * 2 * r * rp) / r**4
        theta_raw = np.arctan2(v[:, 1], v[:, 0])
        # align to the unwrapped presample (nearest stored radius)
        near = np.searchsorted(self._r, r).clip(0, len(self._theta) - 1)
        theta = theta_raw + TWO_PI * np.round((self._theta[near] - theta_raw) / TWO_PI)
        return theta, tp, tpp, rp, rpp

    def value(self, r):
        theta, *_ = self._geom(r)
        return theta.reshape(np.shape(r)) if np.ndim(r) else float(theta[0])

    def d1(self, r):
        _, tp, _, rp, _ = self._geom(r)
        out = tp / rp
        return out.reshape(np.shape(r)) if np.ndim(r) else float(out[0])

    def d2(self, r):
        _, tp, tpp, rp, rpp = self._geom(r)
        out = (tpp * rp - tp * rpp) / rp**3
        return out.reshape(np.shape(r)) if np.ndim(r) else float(out[0])


def angle_functions(poly: CurvilinearPolygon, k: int, rho: float) -> tuple[AngleFunction, AngleFunction]:
    """(lower, upper) angle functions of the two arcs meeting at vertex k, on (0, rho]."""
    psi_lo, psi_hi = poly.sector_frame(k)
    out_arc = poly.arcs[k]
    in_arc = poly.arcs[(k - 1) % poly.p]
    lower = (
        ConstantAngle(psi_lo)
        if out_arc.is_straight
        else ArcAngle(out_arc, poly.vertices[k], -1, psi_lo, rho)
    )
    upper = (
        ConstantAngle(psi_hi)
        if in_arc.is_straight
        else ArcAngle(in_arc, poly.vertices[k], +1, psi_hi, rho)
    )
    return lower, upper


# ---------------------------------------------------------------------------
# parametric curves for element sides (parameter t in [0, 1])

@dataclass(frozen=True)
class Segment:
    a: tuple[float, float]
    b: tuple[float, float]

    def point(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        a = np.asarray(self.a)
        b = np.asarray(self.b)
        return a + t * (b - a)

    def d1(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        return np.broadcast_to(np.asarray(self.b) - np.asarray(self.a), t.shape[:-1] + (2,)).copy()

    def d2(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        return np.zeros(t.shape[:-1] + (2,))


@dataclass(frozen=True)
class CircleEdge:
    center: tuple[float, float]
    radius: float
    ang0: float
    ang1: float

    def _ang(self, t):
        return self.ang0 + np.asarray(t, dtype=float) * (self.ang1 - self.ang0)

    def point(self, t):
        a = self._ang(t)
        return np.asarray(self.center) + self.radius * np.stack([np.cos(a), np.sin(a)], axis=-1)

    def d1(self, t):
        a = self._ang(t)
        da = self.ang1 - self.ang0
        return self.radius * da * np.stack([-np.sin(a), np.cos(a)], axis=-1)

    def d2(self, t):
        a = self._ang(t)
        da = self.ang1 - self.ang0
        return -self.radius * da**2 * np.stack([np.cos(a), np.sin(a)], axis=-1)


@dataclass(frozen=True)
class ExprEdge:
    """Generic analytic side, expressions in t over [0, 1] (mostly for tests)."""

    xt: ex.Node
    yt: ex.Node

    def _trees(self, order):
        tx, ty = self.xt, self.yt
        for _ in range(order):
            tx, ty = ex.diff(tx, 0), ex.diff(ty, 0)
        return tx, ty

    def _eval(self, t, order):
        tx, ty = self._trees(order)
        t = np.asarray(t, dtype=float)
        return np.stack(
            [np.broadcast_to(np.asarray(tx.eval(t)), t.shape),
             np.broadcast_to(np.asarray(ty.eval(t)), t.shape)],
            axis=-1,
        )

    def point(self, t):
        return self._eval(t, 0)

    def d1(self, t):
        return self._eval(t, 1)

    def d2(self, t):
        return self._eval(t, 2)
