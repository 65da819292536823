"""Problem-spec JSON: schema, validation, lossless round-trip, materialization.

The on-disk format is a versioned JSON object.  Arc indices are 1-based in
the file (matching mesh dumps and error messages); everything in memory is
0-based.  Expression strings are kept verbatim so a spec survives
load -> save unchanged.

Schema (version 1)::

    {
      "version": 1,
      "vertices": [[x, y], ...],            # p >= 3, CCW
      "arcs": [{"kind": "line"}, ...],      # p entries, arc i joins vertex i -> i+1
      "dirichlet": [1, 2, ...],             # 1-based arc indices
      "neumann": [...],                     # disjoint; union must cover all arcs
      "coefficients": {"a11": expr, ...},   # any of a11 a12 a22 b1 b2 c; rest default
      "data": {"f": expr,
               "g0": {"1": expr, ...},      # one entry per Dirichlet arc
               "g1": {"5": expr, ...}},     # one entry per Neumann arc
      "discretization": {"M": 3, "W": 3, "mu": 0.15, "rho": 0.2, "I": null},
      "mode": "vertex_continuous"
    }

Arc kinds: "line" (endpoints implied by the vertex list), "circular"
(field "center"; CCW sweep unless "clockwise": true), and "expressions"
(fields "x", "y" in the parameter s in [-1, 1]; endpoints must land on the
vertices).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import expr as ex
from .errors import ParseError, SpecError
from .functional import ProblemData
from .geometry import Arc, CurvilinearPolygon, line_arc
from .mesh import Mesh, build_mesh
from .operators import CoefficientField
from .solver import MODES

SCHEMA_VERSION = 1

_TOP_KEYS = {
    "version", "vertices", "arcs", "dirichlet", "neumann",
    "coefficients", "data", "discretization", "mode",
}
_ARC_KINDS = ("line", "circular", "expressions")
_COEFF_KEYS = ("a11", "a12", "a22", "b1", "b2", "c")


@dataclass
class ProblemSpec:
    """A validated problem description; strings are stored verbatim."""

    vertices: list  # list of [x, y]
    arcs: list  # list of arc descriptor dicts
    dirichlet: tuple  # 0-based arc indices, sorted
    neumann: tuple
    coefficients: dict  # subset of _COEFF_KEYS -> expression string
    f: str
    g0: dict  # 0-based arc -> expression string
    g1: dict
    M: int
    W: int
    mu: float
    rho: float
    I: object = None  # None | int | list of p ints
    mode: str = "vertex_continuous"

    # -- materialization ----------------------------------------------------

    def polygon(self) -> CurvilinearPolygon:
        arcs = [
            _materialize_arc(desc, self.vertices[i],
                             self.vertices[(i + 1) % len(self.vertices)], i)
            for i, desc in enumerate(self.arcs)
        ]
        poly = CurvilinearPolygon(
            np.asarray(self.vertices, dtype=float),
            arcs,
            frozenset(self.dirichlet),
            frozenset(self.neumann),
        )
        poly.validate()
        return poly

    def field(self) -> CoefficientField:
        return CoefficientField.from_dict(self.coefficients)

    def problem_data(self) -> ProblemData:
        return ProblemData(
            f=_parse_xy(self.f, "data.f"),
            g0={a: _parse_xy(s, f"data.g0[{a + 1}]") for a, s in self.g0.items()},
            g1={a: _parse_xy(s, f"data.g1[{a + 1}]") for a, s in self.g1.items()},
        )

    def mesh(self) -> Mesh:
        return build_mesh(self.polygon(), self.rho, self.mu, self.M,
                          I_config=self.I)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "vertices": [list(map(float, v)) for v in self.vertices],
            "arcs": [dict(a) for a in self.arcs],
            "dirichlet": [a + 1 for a in self.dirichlet],
            "neumann": [a + 1 for a in self.neumann],
            "coefficients": dict(self.coefficients),
            "data": {
                "f": self.f,
                "g0": {str(a + 1): s for a, s in sorted(self.g0.items())},
                "g1": {str(a + 1): s for a, s in sorted(self.g1.items())},
            },
            "discretization": {
                "M": self.M, "W": self.W, "mu": self.mu, "rho": self.rho,
                "I": self.I,
            },
            "mode": self.mode,
        }

    @staticmethod
    def from_dict(d: dict) -> "ProblemSpec":
        return _validate_and_build(d)


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------


def _parse_xy(text, where: str) -> ex.Node:
    try:
        return ex.parse(str(text), ("x", "y"))
    except ParseError as e:
        raise SpecError(f"{where}: {e}") from e


def _materialize_arc(desc: dict, v0, v1, i: int) -> Arc:
    kind = desc["kind"]
    if kind == "line":
        return line_arc(v0, v1)
    if kind == "expressions":
        s_name = ("s",)
        arc = Arc(ex.parse(desc["x"], s_name), ex.parse(desc["y"], s_name))
        ends = arc.point(np.array([-1.0, 1.0]))
        err = max(np.hypot(*(ends[0] - v0)), np.hypot(*(ends[1] - v1)))
        scale = max(1.0, float(np.max(np.abs([v0, v1]))))
        if err > 1e-9 * scale:
            raise SpecError(
                f"arcs[{i + 1}]: expression endpoints miss the vertices by {err:.3g}"
            )
        return arc
    # circular
    cx, cy = float(desc["center"][0]), float(desc["center"][1])
    r0 = math.hypot(v0[0] - cx, v0[1] - cy)
    r1 = math.hypot(v1[0] - cx, v1[1] - cy)
    if abs(r0 - r1) > 1e-9 * max(r0, r1, 1.0):
        raise SpecError(
            f"arcs[{i + 1}]: center is not equidistant from the endpoints "
            f"({r0:.6g} vs {r1:.6g})"
        )
    t0 = math.atan2(v0[1] - cy, v0[0] - cx)
    t1 = math.atan2(v1[1] - cy, v1[0] - cx)
    sweep = (t1 - t0) % (2 * math.pi)
    if desc.get("clockwise"):
        sweep = sweep - 2 * math.pi
    if abs(sweep) < 1e-12:
        raise SpecError(f"arcs[{i + 1}]: zero-sweep circular arc")
    # angle(s) = t0 + sweep*(s+1)/2, s in [-1, 1]
    ang = f"({t0!r} + {0.5 * sweep!r}*(s + 1))"
    return Arc(
        ex.parse(f"{cx!r} + {r0!r}*cos{ang}", ("s",)),
        ex.parse(f"{cy!r} + {r0!r}*sin{ang}", ("s",)),
    )


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise SpecError(f"{where}: missing required field '{key}'")
    return d[key]


def _as_int(v, where: str, lo=None) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SpecError(f"{where}: expected an integer, got {v!r}")
    if isinstance(v, float) and v != int(v):
        raise SpecError(f"{where}: expected an integer, got {v!r}")
    v = int(v)
    if lo is not None and v < lo:
        raise SpecError(f"{where}: must be >= {lo}, got {v}")
    return v


def _as_float(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SpecError(f"{where}: expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise SpecError(f"{where}: must be finite, got {v!r}")
    return v


def _as_expr_str(v, where: str) -> str:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = repr(float(v))
    if not isinstance(v, str):
        raise SpecError(f"{where}: expected an expression string, got {type(v).__name__}")
    _parse_xy(v, where)  # fail fast on syntax errors
    return v


def _arc_index_list(v, p: int, where: str) -> tuple:
    if not isinstance(v, (list, tuple)):
        raise SpecError(f"{where}: expected a list of arc indices")
    out = []
    for item in v:
        a = _as_int(item, where)
        if not 1 <= a <= p:
            raise SpecError(f"{where}: arc index {a} out of range 1..{p}")
        out.append(a - 1)
    if len(set(out)) != len(out):
        raise SpecError(f"{where}: duplicate arc indices")
    return tuple(sorted(out))


def _validate_and_build(d: dict) -> ProblemSpec:
    if not isinstance(d, dict):
        raise SpecError("problem spec must be a JSON object")
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise SpecError(f"unknown top-level fields: {sorted(unknown)}")
    version = _need(d, "version", "spec")
    if version != SCHEMA_VERSION:
        raise SpecError(f"unsupported spec version {version!r} (this build reads {SCHEMA_VERSION})")

    verts = _need(d, "vertices", "spec")
    if not isinstance(verts, list) or len(verts) < 3:
        raise SpecError("vertices: need a list of at least 3 points")
    vertices = []
    for i, v in enumerate(verts):
        if not isinstance(v, (list, tuple)) or len(v) != 2:
            raise SpecError(f"vertices[{i}]: expected [x, y]")
        vertices.append([_as_float(v[0], f"vertices[{i}].x"),
                         _as_float(v[1], f"vertices[{i}].y")])
    p = len(vertices)

    arcs_in = _need(d, "arcs", "spec")
    if not isinstance(arcs_in, list) or len(arcs_in) != p:
        raise SpecError(f"arcs: need exactly {p} entries (one per vertex), "
                        f"got {len(arcs_in) if isinstance(arcs_in, list) else type(arcs_in).__name__}")
    arcs = []
    for i, a in enumerate(arcs_in):
        where = f"arcs[{i + 1}]"
        if not isinstance(a, dict):
            raise SpecError(f"{where}: expected an object")
        kind = _need(a, "kind", where)
        if kind not in _ARC_KINDS:
            raise SpecError(f"{where}: unknown kind {kind!r} (expected one of {_ARC_KINDS})")
        allowed = {"line": {"kind"},
                   "circular": {"kind", "center", "clockwise"},
                   "expressions": {"kind", "x", "y"}}[kind]
        extra = set(a) - allowed
        if extra:
            raise SpecError(f"{where}: unexpected fields {sorted(extra)}")
        if kind == "circular":
            c = _need(a, "center", where)
            if not isinstance(c, (list, tuple)) or len(c) != 2:
                raise SpecError(f"{where}.center: expected [x, y]")
            _as_float(c[0], f"{where}.center.x")
            _as_float(c[1], f"{where}.center.y")
        if kind == "expressions":
            for key in ("x", "y"):
                txt = _need(a, key, where)
                if not isinstance(txt, str):
                    raise SpecError(f"{where}.{key}: expected an expression string")
                try:
                    ex.parse(txt, ("s",))
                except ParseError as e:
                    raise SpecError(f"{where}.{key}: {e}") from e
        arcs.append(dict(a))

    dirichlet = _arc_index_list(_need(d, "dirichlet", "spec"), p, "dirichlet")
    neumann = _arc_index_list(_need(d, "neumann", "spec"), p, "neumann")
    both = set(dirichlet) & set(neumann)
    if both:
        raise SpecError(f"arcs tagged both Dirichlet and Neumann: {sorted(a + 1 for a in both)}")
    missing = set(range(p)) - set(dirichlet) - set(neumann)
    if missing:
        raise SpecError(f"arcs with no boundary condition: {sorted(a + 1 for a in missing)}")

    coeffs_in = d.get("coefficients", {})
    if not isinstance(coeffs_in, dict):
        raise SpecError("coefficients: expected an object")
    unknown = set(coeffs_in) - set(_COEFF_KEYS)
    if unknown:
        raise SpecError(f"coefficients: unknown entries {sorted(unknown)}")
    coefficients = {k: _as_expr_str(v, f"coefficients.{k}") for k, v in coeffs_in.items()}

    data = _need(d, "data", "spec")
    if not isinstance(data, dict):
        raise SpecError("data: expected an object")
    unknown = set(data) - {"f", "g0", "g1"}
    if unknown:
        raise SpecError(f"data: unknown entries {sorted(unknown)}")
    f = _as_expr_str(_need(data, "f", "data"), "data.f")
    g0 = _boundary_data(data.get("g0", {}), dirichlet, p, "g0", "Dirichlet")
    g1 = _boundary_data(data.get("g1", {}), neumann, p, "g1", "Neumann")

    disc = _need(d, "discretization", "spec")
    if not isinstance(disc, dict):
        raise SpecError("discretization: expected an object")
    unknown = set(disc) - {"M", "W", "mu", "rho", "I"}
    if unknown:
        raise SpecError(f"discretization: unknown entries {sorted(unknown)}")
    M = _as_int(_need(disc, "M", "discretization"), "discretization.M", lo=1)
    W = _as_int(_need(disc, "W", "discretization"), "discretization.W", lo=1)
    mu = _as_float(_need(disc, "mu", "discretization"), "discretization.mu")
    if not 0.0 < mu < 1.0:
        raise SpecError(f"discretization.mu: must lie in (0, 1), got {mu}")
    rho = _as_float(_need(disc, "rho", "discretization"), "discretization.rho")
    if rho <= 0:
        raise SpecError(f"discretization.rho: must be positive, got {rho}")
    I_conf = disc.get("I")
    if I_conf is not None:
        if isinstance(I_conf, (list, tuple)):
            if len(I_conf) != p:
                raise SpecError(f"discretization.I: per-vertex list needs {p} entries")
            I_conf = [_as_int(v, "discretization.I", lo=1) for v in I_conf]
        else:
            I_conf = _as_int(I_conf, "discretization.I", lo=1)

    mode = _need(d, "mode", "spec")
    if mode not in MODES:
        raise SpecError(f"mode: unknown mode {mode!r} (expected one of {MODES})")

    spec = ProblemSpec(
        vertices=vertices, arcs=arcs, dirichlet=dirichlet, neumann=neumann,
        coefficients=coefficients, f=f, g0=g0, g1=g1,
        M=M, W=W, mu=mu, rho=rho, I=I_conf, mode=mode,
    )
    spec.polygon()  # geometric validation (orientation, arc endpoints, ...)
    return spec


def _boundary_data(entry, tagged: tuple, p: int, name: str, kind: str) -> dict:
    """Per-arc boundary expressions keyed by 1-based arc index strings."""
    if not isinstance(entry, dict):
        raise SpecError(f"data.{name}: expected an object mapping arc index to expression")
    out = {}
    for key, val in entry.items():
        try:
            a = int(key)
        except (TypeError, ValueError):
            raise SpecError(f"data.{name}: key {key!r} is not an arc index") from None
        if not 1 <= a <= p:
            raise SpecError(f"data.{name}: arc index {a} out of range 1..{p}")
        if a - 1 not in tagged:
            raise SpecError(f"data.{name}: arc {a} is not tagged {kind}")
        out[a - 1] = _as_expr_str(val, f"data.{name}[{a}]")
    missing = set(tagged) - set(out)
    if missing:
        raise SpecError(
            f"data.{name}: missing entries for {kind} arcs {sorted(a + 1 for a in missing)}"
        )
    return out


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def loads(text: str) -> ProblemSpec:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecError(
            f"malformed JSON at line {e.lineno} column {e.colno} (char {e.pos}): {e.msg}"
        ) from e
    return ProblemSpec.from_dict(d)


def load(path) -> ProblemSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise SpecError(f"cannot read spec file {path}: {e.strerror or e}") from e
    return loads(text)


def dumps(spec: ProblemSpec) -> str:
    return json.dumps(spec.to_dict(), indent=2, sort_keys=False) + "\n"


def save(spec: ProblemSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(spec))
