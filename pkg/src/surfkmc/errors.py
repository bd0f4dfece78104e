"""Exception types shared across the package.

Configuration mistakes raise ValueError (or TypeError) directly; the classes
here mark numerical failure modes that callers may want to catch and report
rather than treat as bugs.
"""


class NumericalError(RuntimeError):
    """Base class for runtime numerical failures."""


class DivergenceError(NumericalError):
    """A lattice sum or integral does not converge for the given tilt."""


class ConvergenceError(NumericalError):
    """An iterative solve or quadrature failed to reach its tolerance."""


class StallError(NumericalError):
    """Total event rate underflowed to zero; the chain cannot advance."""


class RateOverflowError(NumericalError):
    """A single event rate overflowed double precision."""


class StabilityError(NumericalError):
    """Explicit time step violates the linearized stability bound."""


class StiffnessError(NumericalError):
    """Adaptive step control drove dt below the useful range."""


class BlowUpError(NumericalError):
    """The rough evolution left double range (exponent above 700).

    Attributes carry the blow-up location and time so partial results can be
    reported alongside the failure.
    """

    def __init__(self, message, time=None, cell=None):
        super().__init__(message)
        self.time = time
        self.cell = cell
