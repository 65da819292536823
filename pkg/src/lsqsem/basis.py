"""Quadrature rules and tensor-product Legendre polynomials.

Every element carries its own local rectangle (outer quads use [0,1]^2,
sector cells use their (nu, phi) box), and polynomials are stored as Legendre
coefficients with respect to that rectangle.  Degree is total-per-direction W
in both directions; coefficients are a (W+1) x (W+1) array, flattened
row-major (first-coordinate degree is the slow index).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import roots_jacobi


# ---------------------------------------------------------------------------
# 1D rules

@dataclass(frozen=True)
class Rule1D:
    points: np.ndarray
    weights: np.ndarray

    def mapped(self, a: float, b: float) -> "Rule1D":
        half = 0.5 * (b - a)
        return Rule1D(a + half * (self.points + 1.0), half * self.weights)


@lru_cache(maxsize=256)
def gauss_rule(n: int) -> Rule1D:
    """n-point Gauss-Legendre on [-1,1]; exact through degree 2n-1."""
    if n < 1:
        raise ValueError("need at least one quadrature point")
    x, w = npleg.leggauss(n)
    return Rule1D(x, w)


@lru_cache(maxsize=256)
def gll_rule(q: int) -> Rule1D:
    """Gauss-Lobatto-Legendre of order q (q+1 points incl. +-1); exact through 2q-1."""
    if q < 1:
        raise ValueError("Lobatto rule needs order >= 1")
    if q == 1:
        return Rule1D(np.array([-1.0, 1.0]), np.array([1.0, 1.0]))
    interior, _ = roots_jacobi(q - 1, 1.0, 1.0)  # roots of P_q'
    x = np.concatenate(([-1.0], np.sort(interior), [1.0]))
    pq = npleg.Legendre.basis(q)(x)
    w = 2.0 / (q * (q + 1) * pq**2)
    return Rule1D(x, w)


def tensor_rule(dom, qx: int, qy: int | None = None, kind: str = "gll"):
    """Tensor quadrature on a rectangle dom = ((a0,b0),(a1,b1)).

    Returns (pts (n,2), weights (n,)) flattened with the first coordinate slow.
    """
    qy = qx if qy is None else qy
    base = gll_rule if kind == "gll" else gauss_rule
    (a0, b0), (a1, b1) = dom
    rx = base(qx).mapped(a0, b0)
    ry = base(qy).mapped(a1, b1)
    X, Y = np.meshgrid(rx.points, ry.points, indexing="ij")
    W2 = np.outer(rx.weights, ry.weights)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return pts, W2.ravel()


# ---------------------------------------------------------------------------
# Legendre evaluation helpers

@lru_cache(maxsize=1024)
def _unit_der_coeffs(W: int, deriv: int):
    cols = []
    for k in range(W + 1):
        c = np.zeros(W + 1)
        c[k] = 1.0
        if deriv:
            c = npleg.legder(c, deriv) if k >= deriv else np.zeros(1)
        cols.append(c)
    return tuple(cols)


def leg_matrix(W: int, x: np.ndarray, interval, deriv: int = 0) -> np.ndarray:
    """Matrix (npts, W+1) of the deriv-th derivative of Legendre basis on interval."""
    a, b = interval
    xhat = (2.0 * np.asarray(x, dtype=float) - (a + b)) / (b - a)
    scale = (2.0 / (b - a)) ** deriv
    cols = [npleg.legval(xhat, c) * scale for c in _unit_der_coeffs(W, deriv)]
    return np.stack([np.broadcast_to(c, xhat.shape) for c in cols], axis=-1)


def leg_endpoint_values(W: int) -> tuple[np.ndarray, np.ndarray]:
    """(values at left endpoint, values at right endpoint) of the W+1 basis functions."""
    k = np.arange(W + 1)
    return (-1.0) ** k, np.ones(W + 1)


def leg_l2_norms(W: int, length: float) -> np.ndarray:
    """Exact L2 norms-squared of the mapped Legendre basis on an interval of given length."""
    return length / (2.0 * np.arange(W + 1) + 1.0)


# ---------------------------------------------------------------------------
# polynomials

@dataclass
class Poly1D:
    coeffs: np.ndarray
    interval: tuple[float, float]

    @property
    def W(self) -> int:
        return len(self.coeffs) - 1

    def eval(self, x, deriv: int = 0):
        V = leg_matrix(self.W, np.atleast_1d(x), self.interval, deriv)
        out = V @ self.coeffs
        return float(out[0]) if np.ndim(x) == 0 else out


def tensor_eval_matrix(W: int, dom, pts: np.ndarray, dx: int = 0, dy: int = 0) -> np.ndarray:
    """Rows map flattened coefficients to d^(dx,dy) u at pts (n,2)."""
    pts = np.atleast_2d(pts)
    Vx = leg_matrix(W, pts[:, 0], dom[0], dx)
    Vy = leg_matrix(W, pts[:, 1], dom[1], dy)
    return np.einsum("nr,ns->nrs", Vx, Vy).reshape(len(pts), (W + 1) ** 2)


@dataclass
class TensorPolynomial:
    coeffs: np.ndarray  # (W+1, W+1); [r, s] = degree r along axis 0, s along axis 1
    dom: tuple[tuple[float, float], tuple[float, float]]

    @property
    def W(self) -> int:
        return self.coeffs.shape[0] - 1

    def flat(self) -> np.ndarray:
        return self.coeffs.reshape(-1)

    @classmethod
    def from_flat(cls, vec: np.ndarray, W: int, dom) -> "TensorPolynomial":
        return cls(np.asarray(vec, dtype=float).reshape(W + 1, W + 1), dom)

    def eval(self, pts, dx: int = 0, dy: int = 0):
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        E = tensor_eval_matrix(self.W, self.dom, np.atleast_2d(pts), dx, dy)
        out = E @ self.flat()
        return float(out[0]) if single else out

    def diff(self, axis: int) -> "TensorPolynomial":
        W = self.W
        a, b = self.dom[axis]
        scale = 2.0 / (b - a)
        new = np.zeros_like(self.coeffs)
        if W >= 1:
            if axis == 0:
                d = npleg.legder(self.coeffs, 1, axis=0) * scale
                new[:W, :] = d
            else:
                d = npleg.legder(self.coeffs, 1, axis=1) * scale
                new[:, :W] = d
        return TensorPolynomial(new, self.dom)

    def trace(self, side: int) -> Poly1D:
        """Restriction to a side.

        Side order: 0 = (axis1 = min, param axis0), 1 = (axis0 = max, param axis1),
        2 = (axis1 = max, param axis0), 3 = (axis0 = min, param axis1).
        """
        lo, hi = leg_endpoint_values(self.W)
        if side == 0:
            return Poly1D(self.coeffs @ lo, self.dom[0])
        if side == 1:
            return Poly1D(hi @ self.coeffs, self.dom[1])
        if side == 2:
            return Poly1D(self.coeffs @ hi, self.dom[0])
        if side == 3:
            return Poly1D(lo @ self.coeffs, self.dom[1])
        raise ValueError(f"side must be 0..3, got {side}")


def project(fvals_or_fn, W: int, dom, q: int | None = None) -> TensorPolynomial:
    """Discrete-L2 projection onto degree (W, W) using a GLL tensor grid of order q.

    The GLL Gram matrix of the Legendre basis is exactly diagonal for q >= W+2
    (products of basis functions have degree <= 2W <= 2q-1), so the projection
    reduces to scaled inner products.  ``fvals_or_fn`` is either a callable on
    (n,2) points or an array of values on the grid (flattened is fine).
    """
    q = W + 3 if q is None else q
    if q < W + 2:
        raise ValueError(f"projection grid order {q} too low for degree {W}")
    (a0, b0), (a1, b1) = dom
    rx = gll_rule(q).mapped(a0, b0)
    ry = gll_rule(q).mapped(a1, b1)
    if callable(fvals_or_fn):
        X, Y = np.meshgrid(rx.points, ry.points, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        F = np.asarray(fvals_or_fn(pts), dtype=float)
    else:
        F = np.asarray(fvals_or_fn, dtype=float)
    F = F.reshape(len(rx.points), len(ry.points))
    Vx = leg_matrix(W, rx.points, dom[0])
    Vy = leg_matrix(W, ry.points, dom[1])
    raw = np.einsum("ir,i,ij,j,js->rs", Vx, rx.weights, F, ry.weights, Vy)
    norms = np.outer(leg_l2_norms(W, b0 - a0), leg_l2_norms(W, b1 - a1))
    return TensorPolynomial(raw / norms, dom)


def project_1d(fn, W: int, interval, q: int) -> Poly1D:
    """1D analogue of :func:`project`."""
    if q < W + 2:
        raise ValueError(f"projection grid order {q} too low for degree {W}")
    a, b = interval
    r = gll_rule(q).mapped(a, b)
    V = leg_matrix(W, r.points, interval)
    vals = np.asarray(fn(r.points) if callable(fn) else fn, dtype=float)
    raw = V.T @ (r.weights * vals)
    return Poly1D(raw / leg_l2_norms(W, b - a), interval)
