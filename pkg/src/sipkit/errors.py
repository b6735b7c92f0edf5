"""Exception types raised by sipkit."""


class SIPError(ValueError):
    """Base class for invalid inputs and failed numerical checks."""


class ParameterError(SIPError):
    """Model parameters or configurations violate their constraints."""


class DegenerateDenominatorError(SIPError):
    """A closed-form expression has a vanishing denominator for these parameters."""


class StateSpaceTooLarge(SIPError):
    """The truncated state space exceeds the index range or the size budget."""


class SolvabilityError(SIPError):
    """A Poisson-type equation violates its centering condition."""


class SolverError(SIPError):
    """A linear solve failed or its residual exceeds tolerance."""
