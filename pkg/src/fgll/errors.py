"""Exception hierarchy shared by all fgll modules.

Two roots: InputError for anything wrong with user-supplied data
(networks, files, configuration, call arguments), NumericalError for
solver-side failures. The CLI maps them to exit codes 1 and 2.
"""


class FgllError(Exception):
    pass


class InputError(FgllError):
    pass


class NumericalError(FgllError):
    pass


class ValidationError(InputError):
    """Invalid network description (duplicate id, bad attribute, ...)."""


class DanglingEndpoint(ValidationError):
    """Pipe references a node id that does not exist."""


class MissingSection(InputError):
    def __init__(self, section: str):
        super().__init__(f"missing mandatory section [{section}]")
        self.section = section


class MissingReading(InputError):
    """A declared sensor has no reading at some instant."""


class DuplicateReading(InputError):
    """Same (instant, node, kind) appears more than once."""


class ConfigError(InputError):
    """Malformed or out-of-range run configuration."""


class WindowTooShort(InputError):
    """Fewer measurement instants than the estimator needs."""


class WindowMismatch(InputError):
    """Leak and leak-free inputs cover different numbers of instants."""


class DuplicateVariable(InputError):
    """Variable key added to a factor graph twice."""


class UnknownVariable(InputError):
    """Factor references a key that was never added."""


class NonConvergence(NumericalError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(
            f"no convergence after {iterations} iterations "
            f"(residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


class SingularJacobian(NumericalError):
    """Hydraulic Newton system is singular (e.g. flat head profile)."""


class SingularSystem(NumericalError):
    """Linear system is singular; usually an unconstrained variable block."""


class NumericalFault(NumericalError):
    """A factor produced a non-finite residual or Jacobian entry."""


class NonFinite(NumericalError):
    """Non-finite value encountered during optimization."""
