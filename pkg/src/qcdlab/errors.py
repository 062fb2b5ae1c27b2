"""Exception hierarchy for qcdlab."""


class QcdError(Exception):
    """Base class for every error raised by this package."""


class InvalidModelError(QcdError, ValueError):
    pass


class InvalidLawError(QcdError, ValueError):
    pass


class UnboundedLLRError(QcdError, ValueError):
    """A post-change cell has positive mass where the pre-change law has none."""


class AssumptionError(QcdError):
    """A standing modelling assumption fails; the message is tagged with its name."""

    assumption = "?"

    def __init__(self, message, **values):
        super().__init__(f"[{self.assumption}] {message}")
        self.values = values


class DriftSignError(AssumptionError):
    """Mean drift signs violate m0 < 0 < m1.

    The offending means are available as ``err.values['m0']`` and
    ``err.values['m1']`` so callers can keep them for diagnostics.
    """

    assumption = "drift-sign"


class ExponentError(AssumptionError):
    """No positive root of the CGF equations could be bracketed."""

    assumption = "exponent"


class MetastabilityError(AssumptionError):
    def __init__(self, assumption, message, **values):
        self.assumption = assumption
        super().__init__(message, **values)


class CgfDomainError(QcdError, ArithmeticError):
    """The cumulant generating function is infinite (or overflows) here."""


class RateBoundaryError(QcdError, ValueError):
    """Requested drift lies outside the range of the CGF derivative."""


class DegenerateClassError(QcdError):
    """Autocorrelation matrix of a linear function class is singular."""


class LatticeError(QcdError, ValueError):
    """Statistic is not lattice valued, or the lattice is too large."""


class ConfigError(QcdError, ValueError):
    """Schema violation in an experiment/model config file."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
