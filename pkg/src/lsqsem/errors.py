"""Shared exception types.

Exit-code mapping used by the CLI: usage errors -> 1, SpecError -> 2,
NumericalError -> 3.
"""


class SpecError(ValueError):
    """Invalid problem specification (geometry, BC partition, JSON schema, ...)."""


class ParseError(SpecError):
    """Syntax error in a coefficient expression; carries the byte offset."""

    def __init__(self, message: str, pos: int | None = None):
        self.pos = pos
        if pos is not None:
            message = f"{message} (at offset {pos})"
        super().__init__(message)


class EvalError(ArithmeticError):
    """Non-finite value produced while evaluating an expression tree."""


class MeshError(SpecError):
    """Domain cannot be meshed (overlapping sectors, non-decomposable outer region, ...)."""


class NumericalError(RuntimeError):
    """Numerical failure: singular system, indefinite quadratic form, failed eigensolve."""
