"""
Exceptions raised by the numerical stages. Input validation uses plain ValueError;
the classes below are for failures that callers may want to catch on their own.
"""


class ThresholdCollisionError(ValueError):
    """
    A rate line or the wavenumber sits too close to a pencil point or threshold.
    """

    def __init__(self, message, mu=None):
        super().__init__(message)
        self.mu = mu


class ResolutionError(ValueError):
    pass


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.key = key
        self.line = line


class ContractionError(ArithmeticError):
    def __init__(self, ratio, T):
        super().__init__(
            f"Neumann series is not contracting (successive ratio {ratio:.3g} at T={T}). "
            "T too small: try a larger blending parameter T"
        )
        self.ratio = ratio
        self.T = T


class ResonanceError(ArithmeticError):
    """
    The junction system (or a transfer matrix) is singular to working precision,
    which usually means k is at or very near a trapped-mode wavenumber.
    """


class SolvabilityError(ArithmeticError):
    pass


class BasisError(ArithmeticError):
    pass
