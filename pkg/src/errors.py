"""
Exception hierarchy for the sandpile toolkit.

Every error carries the process exit code the command line reports for it.
"""


class SandpileError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class SpecError(SandpileError):
    """Problems with the model document or user-supplied parameters."""

    exit_code = 2


class SpecParseError(SpecError):
    """The model document could not be parsed."""


class SpecValidationError(SpecError):
    """The model document parsed but describes an invalid model."""


class NumericalGuardError(SandpileError):
    """A numerical routine refused to produce an uncertified answer."""

    exit_code = 3


class ConvergenceError(NumericalGuardError):
    """An iteration hit its cap before meeting its tolerance."""


class OverflowGuardError(NumericalGuardError):
    """A Laplace parameter is too large for double-precision exponentials."""


class BracketError(NumericalGuardError):
    """A root could not be bracketed along a ray."""


class NonTerminationError(NumericalGuardError):
    """Stabilization exceeded its toppling budget."""


class InsufficientBoxError(NumericalGuardError):
    """A Green table is too small or too coarse for the requested quantity."""


class MemoryGuardError(NumericalGuardError):
    """A lattice array would exceed the configured cell budget."""


class GeometryError(NumericalGuardError):
    """Invalid input to a convex-geometry routine."""


class DriftError(NumericalGuardError):
    """The non-killed kernel has a non-zero mean displacement."""

    def __init__(self, drift):
        self.drift = tuple(float(v) for v in drift)
        super().__init__(f"non-zero drift {self.drift}")
