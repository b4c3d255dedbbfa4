"""Exception types shared across the package.

Each class marks one failure category so callers (and the CLI) can
report a single machine-parsable line without inspecting messages.
"""


class ShapeError(ValueError):
    """Operands have incompatible ranks, extents, or channel counts."""


class GeometryError(ValueError):
    """A spatial configuration produces an empty or impossible output
    (non-positive convolution extent, image smaller than a patch,
    non-dyadic input to a strict wavelet transform, and so on)."""


class NumericGuardError(ArithmeticError):
    """A numeric precondition was violated at evaluation time, e.g. a
    divisor below the 1e-12 guard or a non-positive sqrt/log operand.
    These always indicate a bug upstream, not bad user data."""


class GraphError(RuntimeError):
    """Misuse of the autodiff graph: backward from a non-scalar, or an
    operation that must stay outside recorded graphs (hard rounding)
    invoked on a tensor that is part of one."""


class FormatError(ValueError):
    """A serialized artifact (checkpoint, image file, float map) is
    corrupt, truncated, or of an unsupported version."""
