"""Exception types shared across the package."""


class GckfError(Exception):
    """Base class for all package errors."""


class ArgumentError(GckfError, ValueError):
    """Invalid argument: bad shapes, overlapping index sets, out-of-range offsets."""


class NumericalError(GckfError, ArithmeticError):
    """A factorization or inverse failed beyond the configured tolerance."""


class CapabilityError(GckfError):
    """The selected filter core needs something the model does not provide."""


class ProtocolError(GckfError):
    """Messages or likelihoods do not match the layout they are applied to."""


class StabilityError(GckfError):
    """A discretization violates its stability limit (FTCS s <= 0.5, CFL <= 1)."""


class MeasurementError(GckfError):
    """Timing measurements cannot produce a cost ratio."""
