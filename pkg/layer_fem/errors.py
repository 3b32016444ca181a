"""
Exceptions raised by the layer_fem package.

Every error derives from LayerFemError so that entry points can report any
solver failure with a single handler. Most also derive from the builtin that
best describes them.
"""


class LayerFemError(Exception):
    """Base class for all package errors."""


# Expression errors.
class ExprError(LayerFemError, ValueError):
    pass


class ExprSyntaxError(ExprError):
    """Raised when an expression string cannot be parsed.

    Attributes:
        offset (int): Byte offset (UTF-8) of the offending token.
        expected (str): Description of what the parser expected there.
    """

    def __init__(self, source, offset, expected):
        self.source = source
        self.offset = offset
        self.expected = expected
        super().__init__(f"Syntax error at byte {offset} in {source!r}: expected {expected}")


class UnknownIdentifierError(ExprError):
    def __init__(self, name, allowed):
        self.name = name
        self.allowed = tuple(sorted(allowed))
        super().__init__(f"Unknown identifier '{name}'; allowed names are: {', '.join(self.allowed)}")


class UnboundVariableError(ExprError):
    def __init__(self, names):
        self.names = tuple(sorted(names))
        super().__init__(f"Unbound variables: {', '.join(self.names)}")


class ExprDomainError(ExprError, ArithmeticError):
    """Raised when evaluation leaves the domain of an operation.

    Attributes:
        subexpression (str): Printed form of the failing subexpression.
        index (int | None): Flat index of the first failing evaluation point.
    """

    def __init__(self, subexpression, reason, index=None):
        self.subexpression = subexpression
        self.reason = reason
        self.index = index
        super().__init__(f"Domain error in '{subexpression}': {reason}")


# Problem model errors.
class ProblemError(LayerFemError, ValueError):
    pass


class ClassificationAmbiguityError(ProblemError):
    def __init__(self, location, detail):
        self.location = location
        super().__init__(f"Cannot classify point x={location!r}: {detail}")


class BoundCaseError(ProblemError):
    pass


class TransformError(LayerFemError, ArithmeticError):
    """Raised when the transformed coefficients fail the positivity checks."""

    def __init__(self, min_c, min_c_minus_half_bprime):
        self.min_c = min_c
        self.min_c_minus_half_bprime = min_c_minus_half_bprime
        super().__init__(
            f"Transformed problem is not coercive: min c = {min_c:.6g}, "
            f"min (c - b'/2) = {min_c_minus_half_bprime:.6g}"
        )


# Mesh errors.
class MeshError(LayerFemError, ValueError):
    pass


# Finite element errors.
class AssemblyError(LayerFemError, ArithmeticError):
    def __init__(self, cell, cause):
        self.cell = cell
        self.cause = cause
        super().__init__(f"Coefficient evaluation failed in cell {cell}: {cause}")


class SingularSystemError(LayerFemError, ArithmeticError):
    def __init__(self, dof):
        self.dof = dof
        super().__init__(f"Banded system is singular to working precision at dof {dof}")


class InterpolationError(LayerFemError, ValueError):
    pass


class NewtonError(LayerFemError, RuntimeError):
    """Raised when Newton's method does not converge.

    Attributes:
        trace (list): NewtonStep records of the iterations performed.
    """

    def __init__(self, message, trace):
        self.trace = list(trace)
        super().__init__(message)


class LineSearchError(NewtonError):
    pass


# Harness errors.
class ReferenceSolutionError(LayerFemError, ValueError):
    pass


class ConfigError(LayerFemError, ValueError):
    pass
