"""Discretization schedules, broken-norm errors, and convergence studies.

The error of a computed solution is measured elementwise: L^2 and H^1
seminorm integrals in physical coordinates on every polynomial element
(fan layers are integrated in their log-polar frame, where the area
element is e^{2 nu} theta_phi and power singularities are smooth), plus
the mismatch of each fan constant over its tiny core disk with the true
area measure.  Totals are plain sums of the per-element parts.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .basis import TensorPolynomial, gauss_rule, tensor_rule
from .cases import ManufacturedCase
from .errors import MeshError, NumericalError, SpecError
from .functional import FunctionalConfig, build_system, raw_layout
from .mesh import Mesh, build_mesh
from .solver import build_layout, solve_least_squares


# ---------------------------------------------------------------------------
# schedules


def choose_discretization(regularity, sweep, c: float = 1.0) -> list:
    """(M, W) pairs for a sweep.

    Analytic data couple the layer count to the degree: (M, M) for M in the
    sweep.  Finite regularity m uses the sweep as degrees W and picks
    M = ceil(c * m * ln W).
    """
    sweep = [int(s) for s in sweep]
    if not sweep:
        raise SpecError("empty discretization sweep")
    if any(s < 1 for s in sweep):
        raise SpecError(f"sweep entries must be >= 1, got {sweep}")
    if regularity == "analytic":
        return [(s, s) for s in sweep]
    m = int(regularity)
    if m < 1:
        raise SpecError(f"finite regularity index must be >= 1, got {regularity}")
    return [(max(1, math.ceil(c * m * math.log(W))), W) for W in sweep]


# ---------------------------------------------------------------------------
# broken-norm error


@dataclass
class ErrorReport:
    """Elementwise squared errors and their totals for one solve."""

    l2_sq: dict  # element id -> integral of |u_h - u|^2
    h1semi_sq: dict  # element id -> integral of |grad u_h - grad u|^2
    g_errors: dict  # vertex -> |g_k - u(A_k)|
    l2_error: float
    h1semi_error: float
    broken_h1: float
    functional: float | None = None
    unknowns: int | None = None
    wall: float | None = None


def _outer_cell_error(e, P, case, q):
    pts, wts = tensor_rule(e.dom, q, kind="gll")
    X = e.gh.point(pts)
    J = e.gh.jac(pts)
    det = np.abs(J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0])
    dv = wts * det
    diff = P.eval(pts) - np.asarray(case.u(X))
    loc = np.stack([P.eval(pts, 1, 0), P.eval(pts, 0, 1)], -1)
    gh = np.linalg.solve(np.transpose(J, (0, 2, 1)), loc[..., None])[..., 0]
    gdiff = gh - np.asarray(case.grad(X))
    return float(dv @ diff**2), float(dv @ np.sum(gdiff**2, axis=1))


def _sector_jacobian(lay, pts):
    """Physical Jacobian of (nu, phi) -> x on a fan, (n,2,2), plus points."""
    b = lay.blend(pts)
    r, th = b["r"], b["theta"]
    ct, st = np.cos(th), np.sin(th)
    J = np.empty(pts.shape[:1] + (2, 2))
    J[:, 0, 0] = r * (ct - st * b["th_nu"])
    J[:, 1, 0] = r * (st + ct * b["th_nu"])
    J[:, 0, 1] = -r * st * b["th_phi"]
    J[:, 1, 1] = r * ct * b["th_phi"]
    X = lay.center + np.column_stack([r * ct, r * st])
    det = r * r * b["th_phi"]
    return X, J, det


def _sector_cell_error(e, P, case, q):
    pts, wts = tensor_rule(e.dom, q, kind="gll")
    X, J, det = _sector_jacobian(e.sector, pts)
    dv = wts * det
    diff = P.eval(pts) - np.asarray(case.u(X))
    loc = np.stack([P.eval(pts, 1, 0), P.eval(pts, 0, 1)], -1)
    gh = np.linalg.solve(np.transpose(J, (0, 2, 1)), loc[..., None])[..., 0]
    gdiff = gh - np.asarray(case.grad(X))
    return float(dv @ diff**2), float(dv @ np.sum(gdiff**2, axis=1))


def _core_cell_error(e, g, case, q_r=24, q_t=12):
    """|g_k - u|^2 and |grad u|^2 over the wedge's slice of the core disk."""
    lay = e.sector
    sigma2 = float(lay.radii[1])
    rr = gauss_rule(q_r).mapped(0.0, sigma2)
    tt = gauss_rule(q_t).mapped(float(lay.psi[e.wedge]), float(lay.psi[e.wedge + 1]))
    R, PHI = np.meshgrid(rr.points, tt.points, indexing="ij")
    wts = np.outer(rr.weights, tt.weights).ravel()
    pts = np.column_stack([np.log(R.ravel()), PHI.ravel()])
    b = lay.blend(pts)
    r, th = b["r"], b["theta"]
    X = lay.center + np.column_stack([r * np.cos(th), r * np.sin(th)])
    dv = wts * r * b["th_phi"]
    l2 = float(dv @ (g - np.asarray(case.u(X))) ** 2)
    h1 = float(dv @ np.sum(np.asarray(case.grad(X)) ** 2, axis=1))
    return l2, h1


def broken_error(mesh: Mesh, raw, u_raw: np.ndarray, case: ManufacturedCase,
                 q: int | None = None) -> ErrorReport:
    """Elementwise L^2 / H^1-seminorm error of a raw coefficient vector."""
    W = raw.W
    q = W + 6 if q is None else q
    l2_sq, h1_sq = {}, {}
    for e in mesh.elements:
        if e.kind == "core":
            g = float(u_raw[raw.gdof[e.vertex]])
            l2, h1 = _core_cell_error(e, g, case)
        else:
            P = TensorPolynomial.from_flat(u_raw[raw.element_idx(e.id)], W, e.dom)
            cell = _outer_cell_error if e.kind == "outer" else _sector_cell_error
            l2, h1 = cell(e, P, case, q)
        l2_sq[e.id] = l2
        h1_sq[e.id] = h1

    verts = np.asarray(mesh.poly.vertices, dtype=float)
    exact_at = np.asarray(case.u(verts))
    g_errors = {k: float(abs(u_raw[raw.gdof[k]] - exact_at[k])) for k in mesh.sectors}

    tot_l2 = sum(l2_sq.values())
    tot_h1 = sum(h1_sq.values())
    return ErrorReport(
        l2_sq=l2_sq, h1semi_sq=h1_sq, g_errors=g_errors,
        l2_error=math.sqrt(tot_l2), h1semi_error=math.sqrt(tot_h1),
        broken_h1=math.sqrt(tot_l2 + tot_h1),
    )


# ---------------------------------------------------------------------------
# convergence studies


CSV_COLUMNS = ("case", "mode", "M", "W", "unknowns", "functional",
               "l2_error", "h1semi_error", "broken_h1_error")


@dataclass
class ConvergenceResult:
    case: str
    mode: str
    rows: list
    fit: dict | None = None

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([
                r["case"], r["mode"], r["M"], r["W"], r["unknowns"],
                f"{r['functional']:.12e}", f"{r['l2_error']:.12e}",
                f"{r['h1semi_error']:.12e}", f"{r['broken_h1_error']:.12e}",
            ])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.csv_text())


def _solve_point(case: ManufacturedCase, M: int, W: int, mode: str,
                 quad_order: int | None) -> dict:
    t0 = time.perf_counter()
    spec = case.spec
    poly = case.polygon()
    mesh = build_mesh(poly, spec.rho, spec.mu, M, I_config=spec.I)
    cfg = FunctionalConfig(W=W, q_vol=quad_order)
    system = build_system(mesh, case.field(), case.data(), cfg)
    g_fixed = None if mode == "pi0" else case.g_fixed()
    layout = build_layout(mesh, W, mode, g_fixed=g_fixed)
    res = solve_least_squares(system, layout)
    rep = broken_error(mesh, raw_layout(mesh, W), res.u, case)
    rep.functional = res.info["functional"]
    rep.unknowns = layout.n
    rep.wall = time.perf_counter() - t0
    row = {
        "case": case.name, "mode": mode, "M": M, "W": W,
        "unknowns": layout.n, "functional": rep.functional,
        "l2_error": rep.l2_error, "h1semi_error": rep.h1semi_error,
        "broken_h1_error": rep.broken_h1, "wall": rep.wall,
        "g_errors": rep.g_errors,
    }
    for key in ("l2_error", "h1semi_error", "broken_h1_error"):
        if not np.isfinite(row[key]):
            raise NumericalError(f"{key} is not finite")
    return row


def _fit_line(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return float(slope), r2


def convergence_run(case: ManufacturedCase, schedule, mode: str = "vertex_continuous",
                    regularity="analytic", quad_order: int | None = None,
                    threads: int = 1, csv_path=None,
                    seed: int = 20260818) -> ConvergenceResult:
    """Mesh/assemble/solve/error at every schedule point, then fit the decay.

    The case's data-consistency check runs first (interior samples drawn from
    ``seed``) and aborts the study on failure.  Analytic cases fit ln(broken
    error) against M; finite-regularity ones against ln W.  Fits need at
    least 3 points.  Stage errors propagate with the schedule point appended
    to the message.
    """
    schedule = [(int(M), int(W)) for M, W in schedule]
    if not schedule:
        raise SpecError("empty schedule")
    case.check(seed=seed)

    rows = [None] * len(schedule)

    def run(i):
        M, W = schedule[i]
        try:
            rows[i] = _solve_point(case, M, W, mode, quad_order)
        except (SpecError, NumericalError, MeshError) as e:
            note = f"{e} (schedule point M={M}, W={W})"
            try:
                wrapped = type(e)(note)
            except TypeError:
                raise
            raise wrapped from e

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, range(len(schedule))))
    else:
        for i in range(len(schedule)):
            run(i)

    fit = None
    if len(rows) >= 3:
        err = np.log([r["broken_h1_error"] for r in rows])
        if regularity == "analytic":
            x = np.array([r["M"] for r in rows], dtype=float)
            against = "M"
        else:
            x = np.log([r["W"] for r in rows])
            against = "ln_W"
        if np.ptp(x) > 0:
            slope, r2 = _fit_line(x, err)
            fit = {"against": against, "slope": slope, "rate": -slope, "r_squared": r2}

    result = ConvergenceResult(case=case.name, mode=mode, rows=rows, fit=fit)
    if csv_path is not None:
        result.write_csv(csv_path)
    return result
