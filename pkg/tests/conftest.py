from __future__ import annotations

import numpy as np

from lsqsem import expr as ex


def random_smooth_expr(rng: np.random.Generator, depth: int = 3) -> ex.Node:
    """Random expression from a smooth-only grammar (safe to differentiate anywhere).

    Leaves are variables and small literals; interior nodes are add/sub/mul,
    sin/cos, and exp with a damped argument so values stay O(1)-ish.
    """
    if depth == 0 or rng.random() < 0.25:
        choice = rng.integers(0, 3)
        if choice == 0:
            return ex.var(0, "x")
        if choice == 1:
            return ex.var(1, "y")
        return ex.num(round(float(rng.uniform(-2, 2)), 3))
    op = rng.integers(0, 6)
    a = random_smooth_expr(rng, depth - 1)
    if op <= 2:
        b = random_smooth_expr(rng, depth - 1)
        return [ex.add, ex.sub, ex.mul][op](a, b)
    if op == 3:
        return ex.sin(a)
    if op == 4:
        return ex.cos(a)
    return ex.exp(ex.mul(ex.num(0.2), a))


def central_fd(fn, x: np.ndarray, y: np.ndarray, which: int, h: float = 1e-5) -> np.ndarray:
    dx = h if which == 0 else 0.0
    dy = h if which == 1 else 0.0
    return (fn(x + dx, y + dy) - fn(x - dx, y - dy)) / (2 * h)
