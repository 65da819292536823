"""Stability probe: energy matrix oracles, eigenvalue invariants, sweeps.

Frozen oracle values
--------------------
* On a single unit square element (parameter domain (0,1)^2):
  u = 1      -> u^T H u = 1                     (only the L2 part)
  u = x      -> 1/3 + 1 = 4/3                   (value + one first derivative)
  u = x y    -> 1/9 + 1/3 + 1/3 + 1 = 16/9      (value, two firsts, one mixed)
  all by direct integration of squares over (0,1)^2.
* Unit-square Dirichlet instance, M=2, W=2, nonconforming layout:
  lambda_max = 2.540663783978e+00, computed once by the dense generalized
  eigensolver and pinned at 1e-6 relative tolerance.
"""

import csv
import math

import numpy as np
import pytest

import lsqsem.mesh as msh
import lsqsem.stability as stab
from lsqsem.cases import lshape_domain, square_domain
from lsqsem.errors import NumericalError, SpecError
from lsqsem.functional import FunctionalConfig, ProblemData, build_system, raw_layout
from lsqsem.operators import CoefficientField
from lsqsem.solver import build_layout, reduce_system

PINNED_SQUARE_DIRICHLET_2_2 = 2.540663783978e00


def _unit_vec(raw, coeffs):
    u = np.zeros(raw.n)
    u[: coeffs.size] = coeffs.reshape(-1)
    return u


def test_h2_form_single_element_oracles():
    mesh = msh.single_square()
    W = 2
    raw = raw_layout(mesh, W)
    H = stab.assemble_h2_form(mesh, W)

    const = np.zeros((W + 1, W + 1))
    const[0, 0] = 1.0
    u = _unit_vec(raw, const)
    assert abs(u @ H @ u - 1.0) < 1e-12

    # x on (0,1): 1/2 + (2x-1)/2
    cx = np.zeros((W + 1, W + 1))
    cx[0, 0], cx[1, 0] = 0.5, 0.5
    u = _unit_vec(raw, cx)
    assert abs(u @ H @ u - 4.0 / 3.0) < 1e-12

    cxy = np.zeros((W + 1, W + 1))
    cxy[0, 0], cxy[1, 0], cxy[0, 1], cxy[1, 1] = 0.25, 0.25, 0.25, 0.25
    u = _unit_vec(raw, cxy)
    assert abs(u @ H @ u - 16.0 / 9.0) < 1e-12


def test_h2_form_psd_and_fan_weights():
    mesh = msh.build_mesh(square_domain(), rho=0.2, mu=0.15, M=2)
    W = 2
    raw = raw_layout(mesh, W)
    H = stab.assemble_h2_form(mesh, W)
    assert np.allclose(H, H.T)
    evals = np.linalg.eigvalsh(H)
    assert evals[0] > -1e-10
    for k, lay in mesh.sectors.items():
        assert H[raw.gdof[k], raw.gdof[k]] == lay.I
        # fan constants do not couple to anything else
        row = H[raw.gdof[k]].copy()
        row[raw.gdof[k]] = 0.0
        assert np.all(row == 0.0)


def test_extremal_ratio_homogeneity():
    rng = np.random.default_rng(2)
    n = 12
    B = rng.standard_normal((n, n))
    Q = B @ B.T + n * np.eye(n)
    C = rng.standard_normal((n, n))
    H = C @ C.T
    lam = stab.extremal_ratio(H, Q)
    assert abs(stab.extremal_ratio(H, 3.0 * Q) - lam / 3.0) < 1e-10 * lam
    assert abs(stab.extremal_ratio(3.0 * H, 3.0 * Q) - lam) < 1e-10 * lam


def test_extremal_ratio_rayleigh_lower_bounds():
    mesh = msh.build_mesh(square_domain(), rho=0.2, mu=0.15, M=2)
    cfg = FunctionalConfig(W=2)
    field = CoefficientField.laplace()
    system = build_system(mesh, field, ProblemData(), cfg)
    Q, _, _ = system.assemble()
    H = stab.assemble_h2_form(mesh, cfg.W)
    lam = stab.extremal_ratio(H, Q)
    rng = np.random.default_rng(17)
    for _ in range(20):
        u = rng.standard_normal(len(Q))
        assert lam >= (u @ H @ u) / (u @ Q @ u) - 1e-9 * lam


def test_pinned_square_dirichlet_value():
    mesh = msh.build_mesh(square_domain(), rho=0.2, mu=0.15, M=2)
    cfg = FunctionalConfig(W=2)
    r = stab.stability_constant(
        mesh, CoefficientField.laplace(), cfg, "nonconforming"
    )
    assert r.lambda_max == pytest.approx(PINNED_SQUARE_DIRICHLET_2_2, rel=1e-6)
    assert np.isfinite(r.lambda_max) and r.lambda_max > 0


def test_probe_rejects_vertex_continuous():
    mesh = msh.single_square()
    with pytest.raises(SpecError):
        stab.stability_constant(
            mesh, CoefficientField.laplace(), FunctionalConfig(W=2), "vertex_continuous"
        )


def test_singular_q_reports_null_vector():
    # all-Neumann square: constants are invisible to the homogeneous functional
    mesh = msh.single_square(side_bc=("neumann",) * 4)
    cfg = FunctionalConfig(W=2)
    field = CoefficientField.laplace()
    system = build_system(mesh, field, ProblemData(), cfg)
    Q, _, _ = system.assemble()
    H = stab.assemble_h2_form(mesh, cfg.W)
    with pytest.raises(NumericalError) as ei:
        stab.extremal_ratio(H, Q)
    v = ei.value.null_vector
    assert np.linalg.norm(Q @ v) < 1e-8 * np.linalg.norm(v)


def test_pi0_bounded_by_nonconforming():
    poly = lshape_domain(neumann=(4, 5))
    mesh = msh.build_mesh(poly, rho=0.2, mu=0.15, M=2)
    cfg = FunctionalConfig(W=2)
    field = CoefficientField.laplace()
    rn = stab.stability_constant(mesh, field, cfg, "nonconforming")
    rp = stab.stability_constant(mesh, field, cfg, "pi0")
    assert 0 < rp.lambda_max <= rn.lambda_max
    assert rp.n < rn.n


def test_pi0_reduction_matches_manual_restriction():
    # reducing H and Q through the pi0 map equals deleting fixed coordinates
    mesh = msh.build_mesh(square_domain(), rho=0.2, mu=0.15, M=2)
    cfg = FunctionalConfig(W=2)
    field = CoefficientField.laplace()
    Q, _, _ = build_system(mesh, field, ProblemData(), cfg).assemble()
    layout = build_layout(mesh, cfg.W, "pi0")
    Qz, _, _ = reduce_system(Q, np.zeros(len(Q)), 0.0, layout)
    dense_T = layout.T.toarray()
    assert np.allclose(Qz, dense_T.T @ Q @ dense_T, atol=1e-10)


def test_growth_sweep_rows_and_csv(tmp_path):
    field = CoefficientField.laplace()
    path = tmp_path / "sweep.csv"
    rep = stab.growth_sweep(
        "square",
        lambda M: msh.build_mesh(square_domain(), rho=0.2, mu=0.15, M=M),
        field,
        [(2, 2), (3, 3)],
        "nonconforming",
        csv_path=path,
    )
    assert len(rep.rows) == 2
    assert all(np.isfinite(r.lambda_max) and r.lambda_max > 0 for r in rep.rows)
    assert rep.ratio_spread >= 1.0
    with open(path) as fh:
        got = list(csv.reader(fh))
    assert got[0] == [
        "case", "mode", "M", "W", "unknowns", "lambda_max",
        "lnW_sq_ratio", "fit_exponent",
    ]
    assert len(got) == 3
    lam0 = float(got[1][5])
    assert lam0 == pytest.approx(rep.rows[0].lambda_max, rel=1e-11)
    ratio = float(got[1][6])
    assert ratio == pytest.approx(rep.rows[0].lambda_max / math.log(2) ** 2, rel=1e-11)
