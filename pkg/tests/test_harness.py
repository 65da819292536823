"""Schedules, broken-norm error bookkeeping, and convergence runs."""

import math

import numpy as np
import pytest

import lsqsem.cases as cs
import lsqsem.functional as F
import lsqsem.harness as hz
import lsqsem.mesh as msh
from lsqsem.errors import MeshError, SpecError


# -- schedules ----------------------------------------------------------------


def test_schedule_analytic_pairs_layers_with_degree():
    assert hz.choose_discretization("analytic", range(2, 7)) == [
        (2, 2), (3, 3), (4, 4), (5, 5), (6, 6)]


def test_schedule_finite_regularity_formula():
    # M = ceil(c * m * ln W)
    assert hz.choose_discretization(3, [8]) == [(7, 8)]
    assert hz.choose_discretization(2, [2]) == [(2, 2)]
    assert hz.choose_discretization(2, [2, 4, 8], c=0.5) == [(1, 2), (2, 4), (3, 8)]


def test_schedule_rejects_junk():
    with pytest.raises(SpecError, match="empty"):
        hz.choose_discretization("analytic", [])
    with pytest.raises(SpecError, match=">= 1"):
        hz.choose_discretization("analytic", [0, 2])
    with pytest.raises(SpecError, match="regularity"):
        hz.choose_discretization(0, [2])


# -- broken error: exact bookkeeping oracles ----------------------------------


def _const_case(value: float) -> cs.ManufacturedCase:
    """Constant solution of the Laplace problem on the L-shape."""
    spec = cs._spec(cs.LSHAPE_VERTICES, range(6), (), {}, f="0",
                    g0={a: repr(float(value)) for a in range(6)}, g1={})

    def u(p):
        return np.full(len(p), float(value))

    def grad(p):
        return np.zeros((len(p), 2))

    def hess(p):
        return np.zeros((len(p), 3))

    return cs.ManufacturedCase("const", spec, u, grad, hess)


def _represent_constant(mesh, raw, value: float) -> np.ndarray:
    u_raw = np.zeros(raw.n)
    for e in mesh.poly_elements():
        u_raw[raw.block[e.id]] = value  # leading Legendre coefficient
    for k in raw.gdof:
        u_raw[raw.gdof[k]] = value
    return u_raw


def _lshape_setup(M=3, W=3):
    case = _const_case(3.25)
    mesh = msh.build_mesh(case.polygon(), case.spec.rho, case.spec.mu, M)
    raw = F.raw_layout(mesh, W)
    return case, mesh, raw


def test_exact_constant_has_vanishing_error():
    case, mesh, raw = _lshape_setup()
    rep = hz.broken_error(mesh, raw, _represent_constant(mesh, raw, 3.25), case)
    assert rep.broken_h1 < 1e-12
    assert max(rep.g_errors.values()) == 0.0


def test_constant_offset_integrates_the_exact_area():
    # solution = exact + 1: the L^2 error squared must be |Omega| = 3 exactly,
    # which exercises outer Jacobians, the fan area factor, and the true core
    # area in one number; the H^1 seminorm error stays 0.
    case, mesh, raw = _lshape_setup()
    rep = hz.broken_error(mesh, raw, _represent_constant(mesh, raw, 4.25), case)
    assert rep.l2_error**2 == pytest.approx(3.0, abs=1e-12)
    assert rep.h1semi_error == 0.0
    assert rep.broken_h1 == pytest.approx(math.sqrt(3.0), abs=1e-12)
    assert all(v == pytest.approx(1.0, abs=1e-14) for v in rep.g_errors.values())


def test_totals_equal_sums_of_parts():
    case, mesh, raw = _lshape_setup()
    rep = hz.broken_error(mesh, raw, _represent_constant(mesh, raw, 4.25), case)
    assert rep.l2_error**2 == pytest.approx(sum(rep.l2_sq.values()), rel=1e-15)
    assert rep.h1semi_error**2 == pytest.approx(sum(rep.h1semi_sq.values()), rel=1e-15)
    assert set(rep.l2_sq) == {e.id for e in mesh.elements}


def test_zero_solution_integrates_the_exact_norms():
    # u_h = 0 against square_smooth turns the report into plain norms of the
    # exact solution: |u|_{L2}^2 = 1/4 and |u|_{H1}^2 = pi^2/2 on the square.
    case = cs.builtin_case("square_smooth")
    mesh = msh.build_mesh(case.polygon(), case.spec.rho, case.spec.mu, 3)
    raw = F.raw_layout(mesh, 3)
    rep = hz.broken_error(mesh, raw, np.zeros(raw.n), case)
    assert rep.l2_error**2 == pytest.approx(0.25, rel=1e-8)
    assert rep.h1semi_error**2 == pytest.approx(np.pi**2 / 2, rel=1e-8)


# -- convergence runs ----------------------------------------------------------


def test_single_point_schedule_gives_one_row_and_no_fit(tmp_path):
    case = cs.builtin_case("square_smooth")
    out = tmp_path / "one.csv"
    result = hz.convergence_run(case, [(2, 2)], csv_path=out)
    assert len(result.rows) == 1 and result.fit is None
    lines = out.read_text().splitlines()
    assert len(lines) == 2  # header + one row
    assert lines[0].split(",")[:4] == ["case", "mode", "M", "W"]


def test_convergence_csv_is_deterministic():
    case = cs.builtin_case("square_smooth")
    a = hz.convergence_run(case, [(2, 2), (3, 3)]).csv_text()
    b = hz.convergence_run(case, [(2, 2), (3, 3)]).csv_text()
    assert a == b
    assert "wall" not in a  # timing must never leak into the deterministic output


def test_convergence_rows_are_finite_positive_and_decreasing():
    case = cs.builtin_case("lshape_rz")
    result = hz.convergence_run(case, [(2, 2), (3, 3), (4, 4)])
    errs = [r["broken_h1_error"] for r in result.rows]
    assert all(np.isfinite(e) and e > 0 for e in errs)
    assert errs[2] < errs[1] < errs[0]
    assert result.fit is not None and result.fit["against"] == "M"
    assert result.fit["rate"] > 0.2 and result.fit["r_squared"] > 0.9


def test_threaded_run_matches_serial():
    case = cs.builtin_case("square_smooth")
    serial = hz.convergence_run(case, [(2, 2), (3, 3)])
    pooled = hz.convergence_run(case, [(2, 2), (3, 3)], threads=2)
    for a, b in zip(serial.rows, pooled.rows):
        assert a["broken_h1_error"] == pytest.approx(b["broken_h1_error"], rel=1e-12)


def test_consistency_gate_runs_before_any_solve():
    case = cs.builtin_case("square_smooth")
    case.spec.f = "0"  # break the data
    # huge schedule point: if the gate failed to fire first, this would hang
    with pytest.raises(SpecError, match="interior data inconsistent"):
        hz.convergence_run(case, [(40, 40)])


def test_stage_errors_carry_the_schedule_point():
    case = cs.builtin_case("square_smooth")
    case.spec.rho = 0.6  # sectors of neighbouring vertices would overlap
    with pytest.raises(MeshError, match=r"schedule point M=2, W=2"):
        hz.convergence_run(case, [(2, 2)])


def test_empty_schedule_rejected():
    with pytest.raises(SpecError, match="empty"):
        hz.convergence_run(cs.builtin_case("square_smooth"), [])


def test_finite_regularity_fit_is_against_ln_w():
    case = cs.builtin_case("square_smooth")
    sched = hz.choose_discretization(2, [2, 3, 4])
    result = hz.convergence_run(case, sched, regularity=2)
    assert result.fit["against"] == "ln_W"
    assert result.fit["rate"] > 0
