"""Exception hierarchy shared by all modules."""


class WillmoreError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(WillmoreError, ValueError):
    pass


class DomainError(WillmoreError, ValueError):
    """A node or point lies outside the chart domain it was evaluated on."""


class GridConstructionError(WillmoreError):
    """Raised when an overset grid cannot be built (e.g. an orphan halo node)."""


class UnsupportedOrderError(WillmoreError, ValueError):
    pass


class StaleDataError(WillmoreError):
    """Halo or donor data were used before being refreshed."""


class AssemblyError(WillmoreError):
    pass


class NearSingularError(WillmoreError, ArithmeticError):
    """(I - rho L) is numerically singular: the height left the admissible set."""


class DegenerateMetricError(WillmoreError, ArithmeticError):
    pass


class EllipticityError(WillmoreError, ArithmeticError):
    pass


class InadmissibleShiftError(WillmoreError, ValueError):
    pass


class InversionError(WillmoreError, ArithmeticError):
    pass


class RangeError(WillmoreError, ValueError):
    pass


class FitError(WillmoreError, ArithmeticError):
    pass


class ConfigError(WillmoreError, ValueError):
    """Configuration could not be parsed or failed validation."""
