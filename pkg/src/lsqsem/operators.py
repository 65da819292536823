"""Elliptic operator handling: ellipticity checks, per-element transforms.

The solver works with the strong form of

    L u = -sum_rs d/dx_r (a_rs du/dx_s) + b . grad u + c u

expanded into non-divergence form by symbolic differentiation of the
coefficients.  Each element carries a transformed operator in its own local
coordinates:

* outer elements: pull the physical operator back through the Gordon-Hall
  map; the residual picks up sqrt(det J) so its square integrates to the
  physical L2 norm of Lu.
* sector elements: first the exact log-polar rewrite about the vertex
  (multiplying by r^2 = e^{2 tau} to keep coefficients bounded), then the
  angular blend map to the (nu, phi) rectangle, whose jacobian is th_phi.

The six local coefficients (second-order A, B, C; first-order D, E; zeroth
F) can optionally be replaced by their degree-W tensor-Legendre projections
("approximated" operators), which is what the least-squares functional uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import expr as ex
from .basis import TensorPolynomial, project, tensor_eval_matrix, tensor_rule
from .errors import NumericalError, SpecError
from .mesh import Element

_XY = ("x", "y")


def _ast(text_or_node, default=None):
    if text_or_node is None:
        return ex.num(default)
    if isinstance(text_or_node, ex.Node):
        return text_or_node
    return ex.parse(str(text_or_node), _XY)


@dataclass(frozen=True)
class CoefficientField:
    """The six scalar coefficient fields of L in physical coordinates."""

    a11: ex.Node
    a12: ex.Node
    a22: ex.Node
    b1: ex.Node
    b2: ex.Node
    c: ex.Node

    @staticmethod
    def laplace() -> "CoefficientField":
        return CoefficientField.from_dict({})

    @staticmethod
    def from_dict(d: dict) -> "CoefficientField":
        known = {"a11", "a12", "a22", "b1", "b2", "c"}
        extra = set(d) - known
        if extra:
            raise SpecError(f"unknown coefficient entries: {sorted(extra)}")
        return CoefficientField(
            a11=_ast(d.get("a11"), 1.0),
            a12=_ast(d.get("a12"), 0.0),
            a22=_ast(d.get("a22"), 1.0),
            b1=_ast(d.get("b1"), 0.0),
            b2=_ast(d.get("b2"), 0.0),
            c=_ast(d.get("c"), 0.0),
        )

    # -- point evaluation ---------------------------------------------------

    def matrix_at(self, x, y):
        """Principal-part matrix A at points; shape (n, 2, 2)."""
        a11 = np.broadcast_to(self.a11.eval(x, y), np.shape(x)).astype(float)
        a12 = np.broadcast_to(self.a12.eval(x, y), np.shape(x)).astype(float)
        a22 = np.broadcast_to(self.a22.eval(x, y), np.shape(x)).astype(float)
        A = np.empty(np.shape(x) + (2, 2))
        A[..., 0, 0] = a11
        A[..., 0, 1] = a12
        A[..., 1, 0] = a12
        A[..., 1, 1] = a22
        return A

    def vector_at(self, x, y):
        b1 = np.broadcast_to(self.b1.eval(x, y), np.shape(x)).astype(float)
        b2 = np.broadcast_to(self.b2.eval(x, y), np.shape(x)).astype(float)
        return np.stack([b1, b2], axis=-1)

    def matrix_gradients_at(self, x, y):
        """dA/dx1 and dA/dx2 at points, each (n, 2, 2)."""
        out = []
        for which in (0, 1):
            d11 = np.broadcast_to(ex.diff(self.a11, which).eval(x, y), np.shape(x))
            d12 = np.broadcast_to(ex.diff(self.a12, which).eval(x, y), np.shape(x))
            d22 = np.broadcast_to(ex.diff(self.a22, which).eval(x, y), np.shape(x))
            dA = np.empty(np.shape(x) + (2, 2))
            dA[..., 0, 0] = d11
            dA[..., 0, 1] = d12
            dA[..., 1, 0] = d12
            dA[..., 1, 1] = d22
            out.append(dA)
        return out


def ellipticity_constant(field: CoefficientField, x, y) -> float:
    """Smallest eigenvalue of A over the sample points; error if not positive."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size == 0:
        raise SpecError("ellipticity check needs a non-empty sample grid")
    A = field.matrix_at(x, y)
    tr2 = 0.5 * (A[:, 0, 0] + A[:, 1, 1])
    disc = np.sqrt((0.5 * (A[:, 0, 0] - A[:, 1, 1])) ** 2 + A[:, 0, 1] ** 2)
    mu0 = float(np.min(tr2 - disc))
    if mu0 <= 0:
        raise SpecError(f"operator is not elliptic: min eigenvalue {mu0:.3e} <= 0")
    return mu0


# ---------------------------------------------------------------------------
# generic change of variables for a non-divergence-form operator


def _pullback(alpha, beta, gamma, DZ, D2Z):
    """Transform  sum alpha_rs d2u/dz_r dz_s + sum beta_r du/dz_r + gamma u
    through z = Z(w).

    DZ[n, r, p] = dz_r/dw_p, D2Z[n, r, p, q] = d2 z_r / dw_p dw_q.
    Returns the six local coefficients (A, B, C, D, E, F) at the points,
    where the operator reads A u_ww + 2B u_wt + C u_tt + D u_w + E u_t + F u
    in w = (w0, w1).
    """
    det = DZ[:, 0, 0] * DZ[:, 1, 1] - DZ[:, 0, 1] * DZ[:, 1, 0]
    if np.any(np.abs(det) < 1e-14):
        raise NumericalError("element map jacobian is singular at a quadrature point")
    G = np.empty_like(DZ)  # G[n, p, r] = dw_p/dz_r
    G[:, 0, 0] = DZ[:, 1, 1] / det
    G[:, 0, 1] = -DZ[:, 0, 1] / det
    G[:, 1, 0] = -DZ[:, 1, 0] / det
    G[:, 1, 1] = DZ[:, 0, 0] / det

    # second-order block: G alpha G^T
    Abar = np.einsum("npr,nrs,nqs->npq", G, alpha, G)

    # dG/dw_q = -G (dDZ/dw_q) G ;  dG/dz_s = sum_q (dG/dw_q) G[q, s]
    dG_w = -np.einsum("npa,nabq,nbr->nqpr", G, D2Z, G)  # [n, q, p, r]
    dG_z = np.einsum("nqpr,nqs->nprs", dG_w, G)  # [n, p, r, s] = dG[p,r]/dz_s

    first = np.einsum("nr,npr->np", beta, G) + np.einsum("nrs,nprs->np", alpha, dG_z)

    return {
        "A": Abar[:, 0, 0],
        "B": Abar[:, 0, 1],
        "C": Abar[:, 1, 1],
        "D": first[:, 0],
        "E": first[:, 1],
        "F": gamma,
    }


def _nondiv_physical(field: CoefficientField, x, y):
    """alpha = -A, beta = b - div A (row-wise), gamma = c, at physical points."""
    A = field.matrix_at(x, y)
    dA1, dA2 = field.matrix_gradients_at(x, y)
    alpha = -A
    divA = dA1[:, 0, :] + dA2[:, 1, :]  # (sum_r dA_rs/dx_r)_s
    beta = field.vector_at(x, y) - divA
    gamma = np.broadcast_to(field.c.eval(x, y), np.shape(x)).astype(float)
    return alpha, beta, gamma


def _rotations(theta):
    n = theta.shape[0]
    O = np.empty((n, 2, 2))
    O[:, 0, 0] = np.cos(theta)
    O[:, 0, 1] = -np.sin(theta)
    O[:, 1, 0] = np.sin(theta)
    O[:, 1, 1] = np.cos(theta)
    Oth = np.empty((n, 2, 2))  # dO/dtheta
    Oth[:, 0, 0] = -np.sin(theta)
    Oth[:, 0, 1] = -np.cos(theta)
    Oth[:, 1, 0] = np.cos(theta)
    Oth[:, 1, 1] = -np.sin(theta)
    return O, Oth


def sector_frame_coefficients(field: CoefficientField, center, tau, theta):
    """Non-divergence coefficients of e^{2 tau} L in log-polar (tau, theta).

    The rewrite multiplies the equation by r^2, which turns the principal
    part into O^T A O (orthogonal conjugation, so ellipticity is preserved),
    scales b by e^tau and c by e^{2 tau}.  First-order terms induced by the
    divergence form are assembled from dA/dtau and dA/dtheta by the chain
    rule plus the rotation derivative.
    """
    r = np.exp(tau)
    x = center[0] + r * np.cos(theta)
    y = center[1] + r * np.sin(theta)
    A = field.matrix_at(x, y)
    dA1, dA2 = field.matrix_gradients_at(x, y)
    O, Oth = _rotations(theta)

    atil = np.einsum("nrp,nrs,nsq->npq", O, A, O)  # O^T A O
    dA_tau = r[:, None, None] * (
        np.cos(theta)[:, None, None] * dA1 + np.sin(theta)[:, None, None] * dA2
    )
    dA_theta = r[:, None, None] * (
        -np.sin(theta)[:, None, None] * dA1 + np.cos(theta)[:, None, None] * dA2
    )
    datil_tau = np.einsum("nrp,nrs,nsq->npq", O, dA_tau, O)
    datil_theta = (
        np.einsum("nrp,nrs,nsq->npq", Oth, A, O)
        + np.einsum("nrp,nrs,nsq->npq", O, A, Oth)
        + np.einsum("nrp,nrs,nsq->npq", O, dA_theta, O)
    )

    b = field.vector_at(x, y)
    btil = r[:, None] * np.einsum("nrp,nr->np", O, b)
    beta = btil - (datil_tau[:, 0, :] + datil_theta[:, 1, :])
    gamma = r**2 * np.broadcast_to(field.c.eval(x, y), tau.shape).astype(float)
    return -atil, beta, gamma, atil, (x, y)


# ---------------------------------------------------------------------------
# per-element transformed operators


@dataclass
class ElementOperator:
    """Pointwise data of the transformed operator on one element.

    The residual of a local polynomial u at the stored quadrature points is

        (A u_00 + 2B u_01 + C u_11 + D u_0 + E u_1 + F u) * sqrtJ - f_loc

    with f_loc = scale * f(xpts) * sqrtJ filled in by the functional layer.
    """

    element_id: int
    kind: str  # 'outer' | 'sector'
    W: int | None  # projection degree when approximated, else None
    q: int  # GLL order of the stored tensor grid
    dom: tuple
    pts: np.ndarray
    wts: np.ndarray
    xpts: np.ndarray
    sqrtJ: np.ndarray
    scale: np.ndarray  # multiplies the data f (e^{2 tau} in sectors)
    coeffs: dict

    @property
    def approximated(self) -> bool:
        return self.W is not None

    def residual_matrix(self, W: int) -> np.ndarray:
        """(n_pts, (W+1)^2) matrix mapping element coefficients to weighted
        residual samples sqrt(w_i) * (L u)(pt_i)."""
        c = self.coeffs
        M = (
            c["A"][:, None] * tensor_eval_matrix(W, self.dom, self.pts, 2, 0)
            + 2 * c["B"][:, None] * tensor_eval_matrix(W, self.dom, self.pts, 1, 1)
            + c["C"][:, None] * tensor_eval_matrix(W, self.dom, self.pts, 0, 2)
            + c["D"][:, None] * tensor_eval_matrix(W, self.dom, self.pts, 1, 0)
            + c["E"][:, None] * tensor_eval_matrix(W, self.dom, self.pts, 0, 1)
            + c["F"][:, None] * tensor_eval_matrix(W, self.dom, self.pts, 0, 0)
        )
        return np.sqrt(self.wts)[:, None] * self.sqrtJ[:, None] * M

    def residual_values(self, u: TensorPolynomial) -> np.ndarray:
        """Unweighted residual samples (L_loc u)(pt_i), including sqrtJ."""
        c = self.coeffs
        vals = (
            c["A"] * u.eval(self.pts, 2, 0)
            + 2 * c["B"] * u.eval(self.pts, 1, 1)
            + c["C"] * u.eval(self.pts, 0, 2)
            + c["D"] * u.eval(self.pts, 1, 0)
            + c["E"] * u.eval(self.pts, 0, 1)
            + c["F"] * u.eval(self.pts, 0, 0)
        )
        return vals * self.sqrtJ

    def data_vector(self, f: ex.Node) -> np.ndarray:
        """Weighted data samples sqrt(w_i) * f_loc(pt_i) matching residual_matrix."""
        fv = np.broadcast_to(
            f.eval(self.xpts[:, 0], self.xpts[:, 1]), self.scale.shape
        ).astype(float)
        return np.sqrt(self.wts) * self.scale * fv * self.sqrtJ


def transform_operator_outer(
    field: CoefficientField, element: Element, q: int
) -> ElementOperator:
    if element.kind != "outer":
        raise SpecError("transform_operator_outer needs an outer element")
    pts, wts = tensor_rule(element.dom, q, kind="gll")
    x = element.gh.point(pts)
    DZ = element.gh.jac(pts)
    D2Z = element.gh.second(pts)
    alpha, beta, gamma = _nondiv_physical(field, x[:, 0], x[:, 1])
    coeffs = _pullback(alpha, beta, gamma, DZ, D2Z)
    det = DZ[:, 0, 0] * DZ[:, 1, 1] - DZ[:, 0, 1] * DZ[:, 1, 0]
    if np.any(det <= 0):
        raise NumericalError(
            f"outer element {element.id}: non-positive jacobian at a quadrature point"
        )
    return ElementOperator(
        element_id=element.id, kind="outer", W=None, q=q, dom=element.dom,
        pts=pts, wts=wts, xpts=x, sqrtJ=np.sqrt(det),
        scale=np.ones(len(pts)), coeffs=coeffs,
    )


def transform_operator_sector(
    field: CoefficientField, element: Element, q: int
) -> ElementOperator:
    if element.kind != "sector":
        raise SpecError(
            "transform_operator_sector needs a polynomial sector element "
            "(the innermost layer carries no operator)"
        )
    lay = element.sector
    pts, wts = tensor_rule(element.dom, q, kind="gll")
    blend = lay.blend(pts)
    tau = pts[:, 0]
    alpha, beta, gamma, _, (x, y) = sector_frame_coefficients(
        field, lay.center, tau, blend["theta"]
    )
    n = len(pts)
    DZ = np.zeros((n, 2, 2))
    DZ[:, 0, 0] = 1.0
    DZ[:, 1, 0] = blend["th_nu"]
    DZ[:, 1, 1] = blend["th_phi"]
    D2Z = np.zeros((n, 2, 2, 2))
    D2Z[:, 1, 0, 0] = blend["th_nunu"]
    D2Z[:, 1, 0, 1] = blend["th_nuphi"]
    D2Z[:, 1, 1, 0] = blend["th_nuphi"]
    coeffs = _pullback(alpha, beta, gamma, DZ, D2Z)
    return ElementOperator(
        element_id=element.id, kind="sector", W=None, q=q, dom=element.dom,
        pts=pts, wts=wts, xpts=np.column_stack([x, y]),
        sqrtJ=np.sqrt(blend["th_phi"]),
        scale=np.exp(2 * tau), coeffs=coeffs,
    )


def transform_operator(field: CoefficientField, element: Element, q: int) -> ElementOperator:
    if element.kind == "outer":
        return transform_operator_outer(field, element, q)
    return transform_operator_sector(field, element, q)


def approx_operator(op: ElementOperator, W: int) -> ElementOperator:
    """Replace the six coefficient fields by their degree-W projections."""
    if op.approximated:
        raise SpecError("operator is already approximated")
    new = {}
    for key, vals in op.coeffs.items():
        poly = project(vals, W, op.dom, op.q)
        new[key] = poly.eval(op.pts)
    return replace(op, W=W, coeffs=new)


# ---------------------------------------------------------------------------
# edge frames: everything needed to express trace quantities on one element
# side, sampled at edge parameters t in (0, 1)


def outer_edge_frame(field: CoefficientField, element: Element, side: int, t):
    """Physical-frame data along an outer element side.

    Returns point positions, arclength speed, unit tangent (along increasing
    t), outward unit normal, the inverse-jacobian rows (grad of each local
    coordinate), and the principal-part matrix at the points.
    """
    t = np.asarray(t, dtype=float)
    pts = element.side_points(side, t)
    x = element.gh.point(pts)
    J = element.gh.jac(pts)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    G = np.empty_like(J)
    G[:, 0, 0] = J[:, 1, 1] / det
    G[:, 0, 1] = -J[:, 0, 1] / det
    G[:, 1, 0] = -J[:, 1, 0] / det
    G[:, 1, 1] = J[:, 0, 0] / det
    axis = 0 if side in (0, 2) else 1
    tang = J[:, :, axis]
    speed = np.linalg.norm(tang, axis=1)
    T = tang / speed[:, None]
    row, sign = {0: (1, -1.0), 1: (0, 1.0), 2: (1, 1.0), 3: (0, -1.0)}[side]
    nvec = sign * G[:, row, :]
    N = nvec / np.linalg.norm(nvec, axis=1)[:, None]
    return {
        "pts": pts, "x": x, "speed": speed, "T": T, "N": N, "G": G,
        "A": field.matrix_at(x[:, 0], x[:, 1]),
    }


def sector_edge_frame(field: CoefficientField, element: Element, side: int, t):
    """Log-polar-frame data along a sector element side.

    The edge lives on the (nu, phi) rectangle; in the (tau, theta) plane it is
    the curve (tau, theta(nu, phi)).  Provides the chain-rule matrix taking
    (u_nu, u_phi) to (u_tau, u_theta), the unit tangent/normal of the edge in
    the (tau, theta) plane (outward from the element), the conjugated
    principal part O^T A O, and physical positions plus e^tau scalings.
    """
    t = np.asarray(t, dtype=float)
    lay = element.sector
    pts = element.side_points(side, t)
    blend = lay.blend(pts)
    tau = pts[:, 0]
    r = np.exp(tau)
    theta = blend["theta"]
    x = lay.center[0] + r * np.cos(theta)
    y = lay.center[1] + r * np.sin(theta)
    _, _, _, atil, _ = sector_frame_coefficients(field, lay.center, tau, theta)

    n = len(pts)
    # (u_tau, u_theta) = Gb (u_nu, u_phi)
    Gb = np.zeros((n, 2, 2))
    Gb[:, 0, 0] = 1.0
    Gb[:, 0, 1] = -blend["th_nu"] / blend["th_phi"]
    Gb[:, 1, 1] = 1.0 / blend["th_phi"]

    if side in (0, 2):
        # radial edge: runs along nu; image curve (tau, theta(tau, psi))
        tang = np.column_stack([np.ones(n), blend["th_nu"]])
        tang /= np.linalg.norm(tang, axis=1)[:, None]
        if side == 0:
            nrm = np.column_stack([tang[:, 1], -tang[:, 0]])  # lower edge: rotate cw
        else:
            nrm = np.column_stack([-tang[:, 1], tang[:, 0]])  # upper edge: ccw
    else:
        # arc edge: runs along phi at fixed nu; image tangent (0, th_phi)
        tang = np.column_stack([np.zeros(n), np.ones(n)])
        if side == 3:
            nrm = np.column_stack([-np.ones(n), np.zeros(n)])
        else:
            nrm = np.column_stack([np.ones(n), np.zeros(n)])
    return {
        "pts": pts, "x": np.column_stack([x, y]), "r": r, "theta": theta,
        "blend": blend, "Gb": Gb, "T": tang, "N": nrm, "Atil": atil,
    }
