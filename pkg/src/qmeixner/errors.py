"""Exception and warning types shared across the package."""


class QMeixnerError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(QMeixnerError):
    """An argument lies outside the mathematical domain of the operation
    (zero denominator, vanishing theta factor, invalid series route, ...)."""


class RangeError(QMeixnerError):
    """A q-exponent left the supported range; never wraps silently."""


class ConvergenceError(QMeixnerError):
    """A series or q-integral failed to converge at the requested tolerance."""


class PoleError(DomainError):
    """Evaluation requested at (or within one ulp of) a pole.

    ``family`` names the pole family that was hit, e.g. ``"x:-q^(-N-1)"``.
    """

    def __init__(self, message: str, family: str = ""):
        super().__init__(message)
        self.family = family


class WindowError(QMeixnerError):
    """A grid lookup needed a lattice point outside the evaluated window."""


class DegeneracyError(QMeixnerError):
    """A zero assumed simple turned out to be degenerate (derivative ~ 0)."""


class ConditioningWarning(UserWarning):
    """Result is returned but its cross-check or cancellation budget is
    weaker than the working precision would normally guarantee."""
