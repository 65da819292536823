"""Acceptance gate: eleven end-to-end checks, one per shipped guarantee.

Each test prints exactly one machine-greppable verdict line
``[criterion NN] PASS|FAIL — detail`` and then asserts.  Tolerances and
runtime budgets are part of the contract and are asserted, not logged.

Criterion 03 currently FAILS and is expected to: the broken-H1 error ratio
over the (2,2)..(5,5) schedule on the smooth square case reaches ~650x,
short of the demanded 1000x.  Elementwise best-approximation in the same
discrete space caps the attainable ratio at ~760x on this mesh family, so
the bar is unreachable for any solver in this space; the solver itself sits
a uniform ~4x above best-approximation at both endpoints, which is ordinary
least-squares behaviour.  The test states the requirement faithfully and
reports the measured numbers rather than moving the bar.
"""

import math
import time

import numpy as np

import lsqsem.expr as ex
import lsqsem.functional as F
import lsqsem.mesh as msh
import lsqsem.operators as ops
import lsqsem.solver as sol
from lsqsem.cases import builtin_case
from lsqsem.harness import choose_discretization, convergence_run
from lsqsem.mesh import build_mesh
from lsqsem.stability import growth_sweep


def _verdict(num: int, ok: bool, detail: str) -> bool:
    print(f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'} — {detail}")
    return ok


def _case_mesh(case, M):
    spec = case.spec
    return build_mesh(case.polygon(), spec.rho, spec.mu, M, I_config=spec.I)


# ---------------------------------------------------------------------------
# 1. exact recovery on a single square element

def test_c01_single_element_exact_recovery():
    t0 = time.perf_counter()
    mesh = msh.single_square()
    data = F.ProblemData(f=ex.parse("-4"), g0=ex.parse("x^2 + y^2"))
    system = F.build_system(mesh, ops.CoefficientField.laplace(), data,
                            F.FunctionalConfig(W=2))
    layout = sol.build_layout(mesh, 2, "nonconforming")
    res = sol.solve_least_squares(system, layout)

    want = np.zeros((3, 3))
    want[0, 0] = 2.0 / 3.0
    want[1, 0] = want[0, 1] = 0.5
    want[2, 0] = want[0, 2] = 1.0 / 6.0
    coeff_err = float(np.max(np.abs(res.u - want.reshape(-1))))
    functional = res.info["functional"]
    wall = time.perf_counter() - t0

    ok = coeff_err < 1e-8 and functional < 1e-16 and wall < 1.0
    assert _verdict(1, ok, f"coeff err {coeff_err:.2e} (tol 1e-8), "
                           f"functional {functional:.2e} (tol 1e-16), wall {wall:.2f}s (<1s)")


# ---------------------------------------------------------------------------
# 2. exponential convergence on the singular L-shape solution

def test_c02_lshape_exponential_convergence():
    t0 = time.perf_counter()
    case = builtin_case("lshape_rz")
    schedule = choose_discretization("analytic", range(2, 6))
    result = convergence_run(case, schedule, mode=case.spec.mode)
    errs = [r["broken_h1_error"] for r in result.rows]
    wall = time.perf_counter() - t0

    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    rate = result.fit["rate"]
    r2 = result.fit["r_squared"]
    ok = decreasing and r2 >= 0.95 and rate > 0.3 and wall < 300.0
    assert _verdict(2, ok, f"errors {['%.3e' % e for e in errs]} decreasing={decreasing}, "
                           f"rate {rate:.3f} (>0.3), R^2 {r2:.4f} (>=0.95), wall {wall:.1f}s (<300s)")


# ---------------------------------------------------------------------------
# 3. smooth-case spectral convergence: 1000x error drop over the schedule

def test_c03_smooth_thousandfold_reduction():
    t0 = time.perf_counter()
    case = builtin_case("square_smooth")
    schedule = choose_discretization("analytic", range(2, 6))
    result = convergence_run(case, schedule, mode=case.spec.mode)
    errs = [r["broken_h1_error"] for r in result.rows]
    l2s = [r["l2_error"] for r in result.rows]
    wall = time.perf_counter() - t0

    ratio = errs[-1] / errs[0]
    ok = ratio <= 1e-3 and wall < 120.0
    assert _verdict(3, ok, f"broken-H1 err(5,5)/err(2,2) = {ratio:.3e} (need <=1e-3; "
                           f"factor {1.0 / ratio:.0f}x of 1000x), "
                           f"L2 ratio {l2s[-1] / l2s[0]:.3e} for context, wall {wall:.1f}s (<120s)")


# ---------------------------------------------------------------------------
# 4. stability growth, Dirichlet probe

def test_c04_stability_growth_dirichlet():
    t0 = time.perf_counter()
    case = builtin_case("lshape_rz")
    report = growth_sweep(case.name, lambda M: _case_mesh(case, M), case.field(),
                          [(m, m) for m in range(2, 7)], "nonconforming")
    lams = [r.lambda_max for r in report.rows]
    wall = time.perf_counter() - t0

    finite = all(np.isfinite(l) and l > 0 for l in lams)
    growth = lams[-1] / lams[0]
    ok = finite and growth <= 25.0 and wall < 600.0
    assert _verdict(4, ok, f"lambda {['%.3f' % l for l in lams]}, "
                           f"lambda(6,6)/lambda(2,2) = {growth:.3f} (<=25), wall {wall:.1f}s (<600s)")


# ---------------------------------------------------------------------------
# 5. stability growth, vertex-zero layout on the mixed problem

def test_c05_stability_growth_pi0_mixed():
    t0 = time.perf_counter()
    case = builtin_case("lshape_mixed")
    report = growth_sweep(case.name, lambda M: _case_mesh(case, M), case.field(),
                          [(m, m) for m in range(2, 7)], "pi0")
    ratios = [r.lambda_max / math.log(r.W) ** 2 for r in report.rows]
    wall = time.perf_counter() - t0

    spread = max(ratios) / min(ratios)
    ok = spread <= 5.0 and wall < 600.0
    assert _verdict(5, ok, f"lambda/(ln W)^2 in [{min(ratios):.3f}, {max(ratios):.3f}], "
                           f"spread {spread:.3f} (<=5), wall {wall:.1f}s (<600s)")


# ---------------------------------------------------------------------------
# 6. mixed-mode upper-bound consistency at fixed degree

def test_c06_mixed_growth_exponent():
    case = builtin_case("lshape_mixed")
    report = growth_sweep(case.name, lambda M: _case_mesh(case, M), case.field(),
                          [(m, 4) for m in range(2, 6)], "nonconforming")
    lams = [r.lambda_max for r in report.rows]

    nondecreasing = all(b >= a for a, b in zip(lams, lams[1:]))
    expo = report.fit_exponent
    ok = nondecreasing and expo <= 4.5
    assert _verdict(6, ok, f"lambda {['%.1f' % l for l in lams]} "
                           f"non-decreasing={nondecreasing}, fitted exponent {expo:.3f} (<=4.5)")


# ---------------------------------------------------------------------------
# 7. Schur path agrees with the direct path; Schur block size matches

def test_c07_schur_equivalence_and_dimension():
    case = builtin_case("lshape_mixed")
    mesh = _case_mesh(case, 2)
    system = F.build_system(mesh, case.field(), case.data(), F.FunctionalConfig(W=2))
    g_fixed = case.g_fixed()
    layout = sol.build_layout(mesh, 2, "vertex_continuous", g_fixed=g_fixed)
    direct = sol.solve_least_squares(system, layout)
    schur = sol.solve_schur(system, layout)

    rel = float(np.linalg.norm(schur.u - direct.u) / (1.0 + np.linalg.norm(direct.u)))
    n_nodes = len(mesh.node_xy)
    n_ring = sum(len(v) for v in mesh.ring2_nodes.values())
    n_fans = len(mesh.sectors)
    want = n_nodes - n_ring + n_fans - len(g_fixed)

    ok = rel < 1e-9 and schur.info["schur_dim"] == want
    assert _verdict(7, ok, f"|schur - direct| rel {rel:.2e} (tol 1e-9), "
                           f"schur dim {schur.info['schur_dim']} vs oracle {want}")


# ---------------------------------------------------------------------------
# 8. fractional 1/2-norm quadrature against the closed form

def test_c08_half_norm_closed_form():
    he = F.HalfNormEvaluator(16)
    got = he.half_norm_sq(lambda t: t)
    err = abs(got - 4.0 / 3.0)

    c = 2.7
    got_const = he.half_norm_sq(lambda t: np.full_like(t, c))
    const_err = abs(got_const - c * c)

    ok = err < 1e-6 and const_err < 1e-12
    assert _verdict(8, ok, f"||x||^2_(1/2,(0,1)) = {got:.9f} vs 4/3 (err {err:.2e}, tol 1e-6); "
                           f"constant gives {got_const:.12f} vs {c * c} (err {const_err:.2e})")


# ---------------------------------------------------------------------------
# 9. conformity: a globally smooth polynomial produces no jumps anywhere

def test_c09_conformity_of_global_polynomial():
    case = builtin_case("lshape_rz")
    mesh = _case_mesh(case, 3)
    u_node = ex.parse("0.3*x^2*y - x*y + y^2 + 0.2*x^3 + 1")
    report = F.conformity_report(mesh, case.field(), F.FunctionalConfig(W=3), u_node)

    worst = max(report.values())
    ok = worst < 1e-10
    families = {k: f"{v:.1e}" for k, v in sorted(report.items())}
    assert _verdict(9, ok, f"max jump/bridge term {worst:.2e} (tol 1e-10) across {families}")


# ---------------------------------------------------------------------------
# 10. empirical Poincare bound for corner-vanishing polynomials

def test_c10_poincare_ratio_suite():
    worst = 0.0
    for W in range(2, 9):
        rats = sol.poincare_ratios(W, 200, seed=20260818 + W)
        worst = max(worst, float(np.max(rats)))
    ok = worst <= 10.0
    assert _verdict(10, ok, f"max ||u||_0^2/(|u|_1^2+|u|_2^2) over W=2..8, 200 samples each: "
                            f"{worst:.4f} (<=10)")


# ---------------------------------------------------------------------------
# 11. symbolic derivatives against central finite differences

def _random_expression(rng) -> str:
    def leaf():
        r = rng.random()
        if r < 0.35:
            return "x"
        if r < 0.7:
            return "y"
        return f"{rng.uniform(-2, 2):.4f}"

    def node(depth):
        if depth == 0:
            return leaf()
        r = rng.random()
        a = node(depth - 1)
        b = node(depth - 1)
        if r < 0.2:
            return f"({a} + {b})"
        if r < 0.4:
            return f"({a} - {b})"
        if r < 0.6:
            return f"({a} * {b})"
        if r < 0.7:
            return f"sin({a})"
        if r < 0.8:
            return f"cos({a})"
        if r < 0.9:
            return f"exp(0.3*({a}))"
        return f"({a})^{rng.integers(2, 4)}"

    return node(3)


def test_c11_ast_derivatives_match_finite_differences():
    rng = np.random.default_rng(20260818)
    pts = rng.uniform(0.2, 0.8, size=(7, 2))
    h = 1e-5
    worst = 0.0
    for _ in range(100):
        node = ex.parse(_random_expression(rng))
        for which, dx, dy in ((0, h, 0.0), (1, 0.0, h)):
            d = ex.diff(node, which)
            got = ex.evaluate(d, pts[:, 0], pts[:, 1])
            hi = ex.evaluate(node, pts[:, 0] + dx, pts[:, 1] + dy)
            lo = ex.evaluate(node, pts[:, 0] - dx, pts[:, 1] - dy)
            fd = (hi - lo) / (2 * h)
            rel = np.abs(got - fd) / np.maximum(1.0, np.abs(got))
            worst = max(worst, float(np.max(rel)))
    ok = worst < 1e-5
    assert _verdict(11, ok, f"100 random expressions, |AST - central FD| rel max "
                            f"{worst:.2e} (tol 1e-5)")
