"""Expression trees for coefficients, data, and boundary curves.

Small AST over two scalar variables (default names ``x``, ``y``; arcs use a
single variable ``s``).  Nodes: literals, variables, unary ops
(neg/sin/cos/exp/log/sqrt/abs), binary ops (add/sub/mul/div/pow) and the
two-argument atan2.  Supported everywhere: pointwise (vectorized) evaluation
and exact symbolic differentiation.

Conventions:
  * ``^`` is exponentiation, binds tightest, right-associative; unary minus
    binds looser, so ``-x^2`` is ``-(x^2)``.
  * integer-literal exponents are expanded into repeated multiplication when
    the tree is built, so differentiation never needs the general power rule
    for them.
  * no simplification beyond constant folding of literal subtrees (plus the
    0/1 identities that keep derivative trees from ballooning).
  * any NaN/Inf produced during evaluation raises :class:`EvalError` at the
    node where it appears (so ``1/(x-x)`` parses fine and fails only on use).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EvalError, ParseError

__all__ = [
    "Node", "Num", "Var", "Un", "Bin", "Atan2",
    "parse", "evaluate", "diff", "to_string",
    "num", "var", "add", "sub", "mul", "div", "neg", "powx",
    "sin", "cos", "exp", "log", "sqrt", "absval", "atan2",
]

UNARY_OPS = ("neg", "sin", "cos", "exp", "log", "sqrt", "abs")
BINARY_OPS = ("add", "sub", "mul", "div", "pow")

_MAX_INT_POW = 64  # literal integer exponents up to this get expanded


@dataclass(frozen=True)
class Node:
    def __str__(self) -> str:
        return to_string(self)

    def eval(self, *coords):
        return evaluate(self, *coords)

    def diff(self, which) -> "Node":
        return diff(self, which)


@dataclass(frozen=True)
class Num(Node):
    value: float


@dataclass(frozen=True)
class Var(Node):
    index: int
    name: str


@dataclass(frozen=True)
class Un(Node):
    op: str
    a: Node


@dataclass(frozen=True)
class Bin(Node):
    op: str
    a: Node
    b: Node


@dataclass(frozen=True)
class Atan2(Node):
    y: Node
    x: Node


# ---------------------------------------------------------------------------
# smart constructors (constant folding happens here)

def num(v: float) -> Num:
    return Num(float(v))


def var(index: int, name: str = "") -> Var:
    return Var(index, name or ("x", "y")[index])


_UN_FUNCS = {
    "neg": lambda v: -v,
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
}


def _fold_un(op: str, a: Node) -> Node | None:
    if isinstance(a, Num):
        try:
            v = _UN_FUNCS[op](a.value)
        except (ValueError, OverflowError):
            return None  # keep the node; evaluation will raise where it's used
        if math.isfinite(v):
            return Num(float(v))
    return None


def un(op: str, a: Node) -> Node:
    if op not in UNARY_OPS:
        raise ValueError(f"unknown unary op {op!r}")
    folded = _fold_un(op, a)
    if folded is not None:
        return folded
    if op == "neg" and isinstance(a, Un) and a.op == "neg":
        return a.a
    return Un(op, a)


def neg(a: Node) -> Node:
    return un("neg", a)


def sin(a: Node) -> Node:
    return un("sin", a)


def cos(a: Node) -> Node:
    return un("cos", a)


def exp(a: Node) -> Node:
    return un("exp", a)


def log(a: Node) -> Node:
    return un("log", a)


def sqrt(a: Node) -> Node:
    return un("sqrt", a)


def absval(a: Node) -> Node:
    return un("abs", a)


def _is_num(n: Node, v: float) -> bool:
    return isinstance(n, Num) and n.value == v


def add(a: Node, b: Node) -> Node:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    return Bin("add", a, b)


def sub(a: Node, b: Node) -> Node:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return neg(b)
    return Bin("sub", a, b)


def mul(a: Node, b: Node) -> Node:
    if isinstance(a, Num) and isinstance(b, Num):
        v = a.value * b.value
        if math.isfinite(v):
            return Num(v)
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a, -1.0):
        return neg(b)
    if _is_num(b, -1.0):
        return neg(a)
    return Bin("mul", a, b)


def div(a: Node, b: Node) -> Node:
    if isinstance(a, Num) and isinstance(b, Num) and b.value != 0.0:
        v = a.value / b.value
        if math.isfinite(v):
            return Num(v)
    if _is_num(b, 1.0):
        return a
    if _is_num(a, 0.0) and not _is_num(b, 0.0):
        return Num(0.0)
    return Bin("div", a, b)


def _int_pow(a: Node, n: int) -> Node:
    # n >= 1; repeated multiplication by binary splitting
    if n == 1:
        return a
    half = _int_pow(a, n // 2)
    sq = mul(half, half)
    return mul(sq, a) if n % 2 else sq


def powx(a: Node, b: Node) -> Node:
    """Power with integer-literal expansion."""
    if isinstance(b, Num):
        bv = b.value
        if bv == round(bv) and abs(bv) <= _MAX_INT_POW:
            n = int(round(bv))
            if n == 0:
                return Num(1.0)
            if n > 0:
                return _int_pow(a, n)
            return div(Num(1.0), _int_pow(a, -n))
    if isinstance(a, Num) and isinstance(b, Num):
        try:
            v = a.value ** b.value
        except (ValueError, OverflowError, ZeroDivisionError):
            return Bin("pow", a, b)
        if isinstance(v, float) and math.isfinite(v):
            return Num(v)
    return Bin("pow", a, b)


def atan2(y: Node, x: Node) -> Node:
    if isinstance(y, Num) and isinstance(x, Num) and (y.value, x.value) != (0.0, 0.0):
        return Num(math.atan2(y.value, x.value))
    return Atan2(y, x)


# ---------------------------------------------------------------------------
# tokenizer + recursive-descent parser

_FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "log": 1, "sqrt": 1, "abs": 1, "atan2": 2}
_CONSTANTS = {"pi": math.pi}


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "+-*/^(),":
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            tok = text[i:j]
            try:
                float(tok)
            except ValueError:
                raise ParseError(f"bad number {tok!r}", i)
            tokens.append(("num", tok, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {ch!r}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: tuple[str, ...]):
        self.text = text
        self.vars = tuple(variables)
        self.toks = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.toks[self.pos]

    def take(self):
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect(self, value: str):
        kind, val, at = self.take()
        if kind != "op" or val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", at)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, at = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected trailing input {val!r}", at)
        return node

    def expr(self) -> Node:
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                rhs = self.term()
                node = add(node, rhs) if val == "+" else sub(node, rhs)
            else:
                return node

    def term(self) -> Node:
        node = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.take()
                rhs = self.factor()
                node = mul(node, rhs) if val == "*" else div(node, rhs)
            else:
                return node

    def factor(self) -> Node:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return neg(self.factor())
        if kind == "op" and val == "+":
            self.take()
            return self.factor()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            expo = self.factor()  # right-associative; allows x^-2
            return powx(base, expo)
        return base

    def atom(self) -> Node:
        kind, val, at = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            nk, nv, _ = self.peek()
            if nk == "op" and nv == "(":
                if val not in _FUNCTIONS:
                    raise ParseError(f"unknown function {val!r}", at)
                self.take()
                args = [self.expr()]
                while True:
                    k2, v2, a2 = self.take()
                    if k2 == "op" and v2 == ",":
                        args.append(self.expr())
                    elif k2 == "op" and v2 == ")":
                        break
                    else:
                        raise ParseError(f"expected ',' or ')', found {v2 or 'end of input'!r}", a2)
                if len(args) != _FUNCTIONS[val]:
                    raise ParseError(f"{val} takes {_FUNCTIONS[val]} argument(s), got {len(args)}", at)
                if val == "atan2":
                    return atan2(args[0], args[1])
                return un(val, args[0])
            if val in self.vars:
                return Var(self.vars.index(val), val)
            if val in _CONSTANTS:
                return Num(_CONSTANTS[val])
            raise ParseError(f"unknown identifier {val!r}", at)
        raise ParseError(f"unexpected {val or 'end of input'!r}", at)


def parse(text: str, variables: tuple[str, ...] = ("x", "y")) -> Node:
    """Parse ``text`` into an expression tree over the named variables."""
    if not isinstance(text, str):
        raise ParseError(f"expression must be a string, got {type(text).__name__}", 0)
    return _Parser(text, variables).parse()


# ---------------------------------------------------------------------------
# evaluation

def _check_finite(v, node: Node):
    if not np.all(np.isfinite(v)):
        raise EvalError(f"non-finite value while evaluating '{to_string(node)}'")
    return v


def _eval(node: Node, coords) -> np.ndarray:
    if isinstance(node, Num):
        return np.asarray(node.value, dtype=float)
    if isinstance(node, Var):
        if node.index >= len(coords):
            raise EvalError(f"variable '{node.name}' has no bound value")
        return coords[node.index]
    with np.errstate(all="ignore"):
        if isinstance(node, Un):
            a = _eval(node.a, coords)
            if node.op == "neg":
                v = -a
            elif node.op == "sin":
                v = np.sin(a)
            elif node.op == "cos":
                v = np.cos(a)
            elif node.op == "exp":
                v = np.exp(a)
            elif node.op == "log":
                v = np.log(a)
            elif node.op == "sqrt":
                v = np.sqrt(a)
            else:
                v = np.abs(a)
            return _check_finite(v, node)
        if isinstance(node, Bin):
            a = _eval(node.a, coords)
            b = _eval(node.b, coords)
            if node.op == "add":
                v = a + b
            elif node.op == "sub":
                v = a - b
            elif node.op == "mul":
                v = a * b
            elif node.op == "div":
                v = a / b
            else:
                v = np.power(a, b)
            return _check_finite(v, node)
        if isinstance(node, Atan2):
            y = _eval(node.y, coords)
            x = _eval(node.x, coords)
            return _check_finite(np.arctan2(y, x), node)
    raise TypeError(f"not an expression node: {node!r}")


def evaluate(node: Node, *coords):
    """Evaluate at the given coordinate arrays (broadcast like numpy)."""
    scalar = all(np.ndim(c) == 0 for c in coords)
    arrs = tuple(np.asarray(c, dtype=float) for c in coords)
    out = _eval(node, arrs)
    return float(out) if scalar else np.broadcast_arrays(out, *arrs)[0] if arrs else out


# ---------------------------------------------------------------------------
# differentiation

def diff(node: Node, which) -> Node:
    """Exact derivative with respect to a variable (by index or name)."""
    if isinstance(node, Num):
        return Num(0.0)
    if isinstance(node, Var):
        hit = node.index == which if isinstance(which, int) else node.name == which
        return Num(1.0 if hit else 0.0)
    if isinstance(node, Un):
        da = diff(node.a, which)
        a = node.a
        if node.op == "neg":
            return neg(da)
        if node.op == "sin":
            return mul(cos(a), da)
        if node.op == "cos":
            return neg(mul(sin(a), da))
        if node.op == "exp":
            return mul(exp(a), da)
        if node.op == "log":
            return div(da, a)
        if node.op == "sqrt":
            return div(da, mul(Num(2.0), sqrt(a)))
        # d|a| = a/|a| * da; blows up at 0 exactly where it should
        return div(mul(a, da), absval(a))
    if isinstance(node, Bin):
        a, b = node.a, node.b
        da, db = diff(a, which), diff(b, which)
        if node.op == "add":
            return add(da, db)
        if node.op == "sub":
            return sub(da, db)
        if node.op == "mul":
            return add(mul(da, b), mul(a, db))
        if node.op == "div":
            return div(sub(mul(da, b), mul(a, db)), mul(b, b))
        # pow: integer-literal exponents were expanded already, so either the
        # exponent is a non-integer literal (power rule, no log needed) or it
        # is a genuine function (full generalized rule).
        if isinstance(b, Num):
            return mul(mul(b, powx(a, Num(b.value - 1.0))), da)
        fg = Bin("pow", a, b)
        return mul(fg, add(mul(db, log(a)), div(mul(b, da), a)))
    if isinstance(node, Atan2):
        y, x = node.y, node.x
        dy, dx = diff(y, which), diff(x, which)
        denom = add(mul(x, x), mul(y, y))
        return div(sub(mul(x, dy), mul(y, dx)), denom)
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# printing (matches the parser's precedence exactly)

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4, "atom": 9}


def _prec(node: Node) -> int:
    if isinstance(node, (Num, Var, Atan2)):
        if isinstance(node, Num) and node.value < 0:
            return _PREC["neg"]
        return _PREC["atom"]
    if isinstance(node, Un):
        return _PREC["neg"] if node.op == "neg" else _PREC["atom"]
    return _PREC[node.op]


def _fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _wrap(node: Node, parent_prec: int) -> str:
    s = to_string(node)
    return f"({s})" if _prec(node) < parent_prec else s


def to_string(node: Node) -> str:
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Un):
        if node.op == "neg":
            return "-" + _wrap(node.a, _PREC["neg"] + 1)
        return f"{node.op}({to_string(node.a)})"
    if isinstance(node, Atan2):
        return f"atan2({to_string(node.y)}, {to_string(node.x)})"
    if isinstance(node, Bin):
        if node.op == "pow":
            # right-associative: parenthesize a left child of equal precedence
            return f"{_wrap(node.a, _PREC['pow'] + 1)}^{_wrap(node.b, _PREC['pow'])}"
        sym = {"add": " + ", "sub": " - ", "mul": "*", "div": "/"}[node.op]
        p = _PREC[node.op]
        # left-associative: right child needs strictly higher precedence for - and /
        right_min = p + 1 if node.op in ("sub", "div") else p
        return f"{_wrap(node.a, p)}{sym}{_wrap(node.b, right_min)}"
    raise TypeError(f"not an expression node: {node!r}")
