"""Command-line front end.

Four subcommands share one executable:

  mesh <spec.json> [--dump mesh.json]          build + describe the mesh
  solve <spec.json> [--out sol.json] [--report rep.json]
  stability --case NAME --mode dirichlet|mixed|pi0 --M a..b --W a..b --out CSV
  convergence --case NAME --sweep a..b [--regularity m] --out CSV

Global flags (--quad-order, --mu, --seed, --threads) are accepted by every
subcommand.  Exit codes: 0 success, 1 usage, 2 spec/validation error,
3 numerical failure; every failure prints a single-line reason on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time

import numpy as np

from . import expr as ex
from .cases import builtin_case
from .errors import EvalError, NumericalError, SpecError
from .functional import FunctionalConfig, build_system, raw_layout
from .harness import choose_discretization, convergence_run
from .mesh import build_mesh
from . import probspec
from .probspec import ProblemSpec
from .solver import build_layout, solve_least_squares
from .stability import growth_sweep

STABILITY_MODES = {
    "dirichlet": "nonconforming",
    "mixed": "nonconforming",
    "pi0": "pi0",
}


class _Usage(Exception):
    """Command-line grammar violation; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract wants 1
        raise _Usage(message)


def _parse_range(text: str, flag: str) -> list[int]:
    """``a..b`` (inclusive) or a single integer."""
    s = text.strip()
    lo, sep, hi = s.partition("..")
    try:
        if sep:
            first, last = int(lo), int(hi)
        else:
            first = last = int(s)
    except ValueError:
        raise _Usage(f"argument {flag}: expected a..b or a single integer, got {text!r}")
    if last < first:
        raise _Usage(f"argument {flag}: empty range {text!r}")
    return list(range(first, last + 1))


def _one_line(e: BaseException) -> str:
    return " ".join(str(e).split())


def _spec_with_overrides(spec: ProblemSpec, ns) -> ProblemSpec:
    if ns.mu is not None:
        spec = dataclasses.replace(spec, mu=float(ns.mu))
    return spec


def _case_with_overrides(name: str, ns):
    case = builtin_case(name)
    if ns.mu is not None:
        case = dataclasses.replace(
            case, spec=dataclasses.replace(case.spec, mu=float(ns.mu))
        )
    return case


def _g_fixed_from_data(poly, data) -> dict:
    """Fan constants pinned from Dirichlet data: each vertex touching a
    Dirichlet arc takes that arc's g0 evaluated at the vertex."""
    vals = {}
    for a in sorted(poly.dirichlet):
        node = data.g0_for(a)
        for v in (a, (a + 1) % poly.p):
            if v in vals:
                continue
            x, y = poly.vertices[v]
            vals[v] = float(ex.evaluate(node, np.array([x]), np.array([y]))[0])
    return vals


# ---------------------------------------------------------------------------
# subcommands

def _cmd_mesh(ns) -> int:
    spec = _spec_with_overrides(probspec.load(ns.spec), ns)
    mesh = spec.mesh()
    print(json.dumps(mesh.summary(), sort_keys=True))
    if ns.dump is not None:
        with open(ns.dump, "w", encoding="utf-8") as fh:
            json.dump(mesh.to_dict(), fh, indent=2)
            fh.write("\n")
    return 0


def _cmd_solve(ns) -> int:
    t0 = time.perf_counter()
    spec = _spec_with_overrides(probspec.load(ns.spec), ns)
    poly = spec.polygon()
    mesh = build_mesh(poly, spec.rho, spec.mu, spec.M, I_config=spec.I)
    field = spec.field()
    data = spec.problem_data()
    cfg = FunctionalConfig(W=spec.W, q_vol=ns.quad_order)
    system = build_system(mesh, field, data, cfg)
    g_fixed = None if spec.mode == "pi0" else _g_fixed_from_data(poly, data)
    layout = build_layout(mesh, spec.W, spec.mode, g_fixed=g_fixed)
    res = solve_least_squares(system, layout)
    raw = raw_layout(mesh, spec.W)
    wall = time.perf_counter() - t0

    functional = res.info["functional"]
    print(
        f"solved {ns.spec}: mode={spec.mode} M={spec.M} W={spec.W} "
        f"unknowns={layout.n} functional={functional:.12e}"
    )

    if ns.out is not None:
        sol = {
            "version": 1,
            "mode": spec.mode,
            "M": spec.M,
            "W": spec.W,
            "elements": [
                {
                    "id": e.id,
                    "kind": e.kind,
                    "offset": raw.block[e.id],
                    "count": (spec.W + 1) ** 2,
                }
                for e in mesh.poly_elements()
            ],
            "fan_constants": {str(k): off for k, off in sorted(raw.gdof.items())},
            "coefficients": [float(v) for v in res.u],
        }
        with open(ns.out, "w", encoding="utf-8") as fh:
            json.dump(sol, fh, indent=2)
            fh.write("\n")

    if ns.report is not None:
        rep = {
            "spec": ns.spec,
            "mode": spec.mode,
            "M": spec.M,
            "W": spec.W,
            "unknowns": layout.n,
            "raw_dofs": raw.n,
            "functional": functional,
            "path": res.info.get("path", "direct"),
            "wall_seconds": wall,
        }
        with open(ns.report, "w", encoding="utf-8") as fh:
            json.dump(rep, fh, indent=2)
            fh.write("\n")
    return 0


def _cmd_stability(ns) -> int:
    mode = STABILITY_MODES[ns.mode]
    case = _case_with_overrides(ns.case, ns)
    Ms = _parse_range(ns.M, "--M")
    Ws = _parse_range(ns.W, "--W")
    if len(Ms) == 1 and len(Ws) > 1:
        Ms = Ms * len(Ws)
    if len(Ws) == 1 and len(Ms) > 1:
        Ws = Ws * len(Ms)
    if len(Ms) != len(Ws):
        raise _Usage(f"--M and --W ranges have different lengths ({len(Ms)} vs {len(Ws)})")
    spec = case.spec
    poly = case.polygon()
    field = case.field()

    def mesh_factory(M):
        return build_mesh(poly, spec.rho, spec.mu, M, I_config=spec.I)

    report = growth_sweep(case.name, mesh_factory, field,
                          list(zip(Ms, Ws)), mode, csv_path=ns.out)
    last = report.rows[-1]
    print(
        f"stability {case.name} mode={ns.mode}({mode}) points={len(report.rows)} "
        f"lambda_max[last]={last.lambda_max:.6e} "
        f"lnW_sq_spread={report.ratio_spread:.4f} fit_exponent={report.fit_exponent:.4f}"
    )
    return 0


def _cmd_convergence(ns) -> int:
    case = _case_with_overrides(ns.case, ns)
    sweep = _parse_range(ns.sweep, "--sweep")
    regularity = "analytic" if ns.regularity is None else int(ns.regularity)
    schedule = choose_discretization(regularity, sweep)
    result = convergence_run(
        case,
        schedule,
        mode=case.spec.mode,
        regularity=regularity,
        quad_order=ns.quad_order,
        threads=ns.threads,
        csv_path=ns.out,
        seed=ns.seed,
    )
    for r in result.rows:
        print(
            f"M={r['M']} W={r['W']} unknowns={r['unknowns']} "
            f"broken_h1={r['broken_h1_error']:.6e}"
        )
    if result.fit is not None:
        f = result.fit
        print(
            f"fit: ln(error) vs {f['against']}: rate={f['rate']:.4f} "
            f"r_squared={f['r_squared']:.4f}"
        )
    else:
        print("fit: skipped (need >= 3 points)")
    return 0


# ---------------------------------------------------------------------------
# parser

def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--quad-order", type=int, default=None,
                        help="volume quadrature order override")
    common.add_argument("--mu", type=float, default=None,
                        help="grading ratio override")
    common.add_argument("--seed", type=int, default=20260818,
                        help="seed for consistency-check sampling")
    common.add_argument("--threads", type=int, default=1,
                        help="concurrent schedule points")

    p = _Parser(prog="lsqsem", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    pm = sub.add_parser("mesh", parents=[common], help="build and describe the mesh")
    pm.add_argument("spec", help="problem spec JSON file")
    pm.add_argument("--dump", default=None, metavar="OUT",
                    help="write the mesh as JSON")
    pm.set_defaults(func=_cmd_mesh)

    psv = sub.add_parser("solve", parents=[common], help="solve one problem spec")
    psv.add_argument("spec", help="problem spec JSON file")
    psv.add_argument("--out", default=None, metavar="SOLUTION",
                     help="write the solution (layout + coefficients) as JSON")
    psv.add_argument("--report", default=None, metavar="REPORT",
                     help="write a solve report as JSON")
    psv.set_defaults(func=_cmd_solve)

    pst = sub.add_parser("stability", parents=[common],
                         help="stability-constant growth sweep")
    pst.add_argument("--case", required=True, help="builtin case name")
    pst.add_argument("--mode", required=True, choices=sorted(STABILITY_MODES),
                     help="probe layout")
    pst.add_argument("--M", required=True, help="layer range a..b")
    pst.add_argument("--W", required=True, help="degree range a..b")
    pst.add_argument("--out", required=True, help="CSV output path")
    pst.set_defaults(func=_cmd_stability)

    pc = sub.add_parser("convergence", parents=[common],
                        help="convergence study on a builtin case")
    pc.add_argument("--case", required=True, help="builtin case name")
    pc.add_argument("--sweep", required=True, help="sweep range a..b")
    pc.add_argument("--regularity", default=None, metavar="m",
                    help="finite Sobolev regularity (default: analytic)")
    pc.add_argument("--out", default=None, help="CSV output path")
    pc.set_defaults(func=_cmd_convergence)
    return p


def main(argv=None) -> int:
    try:
        ns = _build_parser().parse_args(argv)
        return ns.func(ns)
    except _Usage as e:
        print(f"usage error: {_one_line(e)}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"numerical error: {_one_line(e)}", file=sys.stderr)
        return 3
    except (SpecError, EvalError) as e:
        print(f"spec error: {_one_line(e)}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"io error: {_one_line(e)}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
