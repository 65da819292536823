"""Probe of the discrete stability constant.

The guaranteed bound for the method relates a broken second-order energy of
any layout vector to the homogeneous least-squares functional.  The best
discrete constant is the largest generalized eigenvalue of

    H u = lambda Q u

where H collects the full H^2 norm of every element block over its own
parameter rectangle (mixed second derivative counted once) plus the squared
fan constants, each weighted by its wedge count, and Q is the functional
with zero data and nothing eliminated.  Sweeps over (M, W) record how the
constant grows; bounded lambda / (ln W)^2 is the polylog regime, while a
fan with two Neumann arcs is allowed to grow like a power of M.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .basis import tensor_eval_matrix, tensor_rule
from .errors import NumericalError, SpecError
from .functional import FunctionalConfig, ProblemData, build_system, raw_layout
from .mesh import Mesh, build_mesh
from .operators import CoefficientField
from .solver import build_layout, reduce_system

_DERIVS = ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))


def assemble_h2_form(mesh: Mesh, W: int) -> np.ndarray:
    """Raw-layout matrix of the broken H^2 energy.

    Element blocks integrate u^2 + u_x^2 + u_y^2 + u_xx^2 + u_xy^2 + u_yy^2
    over the element's parameter rectangle; each fan constant contributes
    its square once per wedge of the fan.
    """
    raw = raw_layout(mesh, W)
    H = np.zeros((raw.n, raw.n))
    for e in mesh.poly_elements():
        pts, wts = tensor_rule(e.dom, W + 2, kind="gll")
        block = np.zeros(((W + 1) ** 2, (W + 1) ** 2))
        for dx, dy in _DERIVS:
            E = tensor_eval_matrix(W, e.dom, pts, dx, dy)
            block += E.T @ (wts[:, None] * E)
        idx = raw.element_idx(e.id)
        H[np.ix_(idx, idx)] += block
    for k, lay in mesh.sectors.items():
        H[raw.gdof[k], raw.gdof[k]] += lay.I
    return H


def extremal_ratio(H: np.ndarray, Q: np.ndarray) -> float:
    """Largest lambda with H u = lambda Q u, for symmetric H and PD Q.

    Q is reduced by Cholesky; a failure there is diagnosed with the
    near-null direction so the caller sees what degenerated.
    """
    try:
        L = sla.cholesky(Q, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        w, v = sla.eigh(Q, subset_by_index=[0, 0], check_finite=False)
        err = NumericalError(
            "homogeneous functional is singular on this layout "
            f"(smallest eigenvalue {w[0]:.3e}); the attached null_vector "
            "spans the degenerate direction"
        )
        err.null_vector = v[:, 0]
        raise err from exc
    X = sla.solve_triangular(L, H, lower=True, check_finite=False)
    A = sla.solve_triangular(L, X.T, lower=True, check_finite=False)
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    lam = float(sla.eigvalsh(A, subset_by_index=[n - 1, n - 1], check_finite=False)[0])
    return lam


@dataclass
class ProbeResult:
    mode: str
    M: int
    W: int
    n: int
    lambda_max: float


def stability_constant(
    mesh: Mesh, field: CoefficientField, cfg: FunctionalConfig, mode: str
) -> ProbeResult:
    """Best discrete stability constant on the given layout mode.

    The functional is assembled with zero data and no eliminations: fan
    constants stay free in nonconforming mode and are pinned (with all
    corner values) in pi0 mode.
    """
    if mode not in ("nonconforming", "pi0"):
        raise SpecError("the stability probe runs on nonconforming or pi0 layouts")
    system = build_system(mesh, field, ProblemData(), cfg)
    Q, _, _ = system.assemble()
    layout = build_layout(mesh, cfg.W, mode)
    zero = np.zeros(len(Q))
    Qz, _, _ = reduce_system(Q, zero, 0.0, layout)
    H = assemble_h2_form(mesh, cfg.W)
    Hz, _, _ = reduce_system(H, zero, 0.0, layout)
    lam = extremal_ratio(Hz, Qz)
    if not (np.isfinite(lam) and lam > 0):
        raise NumericalError(f"stability constant came out non-finite or <= 0: {lam}")
    return ProbeResult(mode=mode, M=mesh.M, W=cfg.W, n=layout.n, lambda_max=lam)


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepReport:
    case: str
    mode: str
    rows: list  # of ProbeResult
    ratio_spread: float  # max/min of lambda / (ln W)^2
    fit_exponent: float  # slope of ln(lambda) against ln(M) (or ln(W) if M fixed)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["case", "mode", "M", "W", "unknowns", "lambda_max",
                 "lnW_sq_ratio", "fit_exponent"]
            )
            for r in self.rows:
                w.writerow(
                    [
                        self.case, self.mode, r.M, r.W, r.n,
                        f"{r.lambda_max:.12e}",
                        f"{r.lambda_max / math.log(r.W) ** 2:.12e}",
                        f"{self.fit_exponent:.12e}",
                    ]
                )


def _fit_slope(x: np.ndarray, y: np.ndarray) -> float:
    if len(x) < 2 or np.ptp(x) == 0:
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])


def growth_sweep(
    case: str,
    mesh_factory,
    field: CoefficientField,
    pairs,
    mode: str,
    csv_path=None,
) -> SweepReport:
    """Run the probe over (M, W) pairs; ``mesh_factory(M)`` builds the mesh.

    The ratio spread tracks lambda / (ln W)^2 across the sweep; the fitted
    exponent is the log-log slope against M when M varies, otherwise
    against W.
    """
    rows = []
    for M, W in pairs:
        mesh = mesh_factory(M)
        cfg = FunctionalConfig(W=W)
        rows.append(stability_constant(mesh, field, cfg, mode))
    ratios = [r.lambda_max / math.log(r.W) ** 2 for r in rows]
    spread = max(ratios) / min(ratios) if rows else float("nan")
    Ms = np.array([r.M for r in rows], dtype=float)
    Ws = np.array([r.W for r in rows], dtype=float)
    lams = np.log([r.lambda_max for r in rows])
    if np.ptp(Ms) > 0:
        expo = _fit_slope(np.log(Ms), lams)
    else:
        expo = _fit_slope(np.log(Ws), lams)
    report = SweepReport(
        case=case, mode=mode, rows=rows, ratio_spread=spread, fit_exponent=expo
    )
    if csv_path is not None:
        report.write_csv(csv_path)
    return report
