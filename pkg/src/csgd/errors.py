"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration file or parameter block failed validation."""


class NumericOverflowError(ArithmeticError):
    """An operation produced a non-finite value."""


class NonConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""


class DivergenceError(RuntimeError):
    """An SGD run blew up (iterate norm past the divergence threshold)."""


class DegenerateDiagnosticError(RuntimeError):
    """The coupled-distance reference fell below the positivity floor."""


class DegenerateDirectionError(ValueError):
    """The initial difference vector is orthogonal to the required eigendirection."""


class HorizonTooShortError(ValueError):
    """Requested horizon cannot flush the transient for the certified rate."""
