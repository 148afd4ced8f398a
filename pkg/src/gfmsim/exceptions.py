"""Exception hierarchy shared by all gfmsim modules."""


class GfmError(Exception):
    """Base class for every error raised by gfmsim."""


class InvalidInputError(GfmError, ValueError):
    """An argument violates a documented precondition."""


class PoleOnAxisError(GfmError):
    """A frequency response was requested exactly at a pole."""


class NoCrossoverError(GfmError):
    """No gain crossover exists in the searched frequency range."""


class ImproperSystemError(GfmError):
    """The numerator degree exceeds the denominator degree."""


class ShapeError(GfmError):
    """A transfer function does not have the expected pole structure."""


class InfeasibleError(GfmError):
    """A requested operating point cannot be reached."""


class InstabilityError(GfmError):
    """A closed loop that must be stable is not.

    Parameters
    ----------
    message : str
    poles : sequence of complex
        The offending closed-loop poles.
    """

    def __init__(self, message, poles=()):
        super().__init__(message)
        self.poles = list(poles)


class DivergenceError(GfmError):
    """A simulation state left its admissible range."""

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


class InitializationError(GfmError):
    """The settle simulation did not reach equilibrium."""


class MetricError(GfmError):
    """Metrics cannot be computed from the given log."""


class ConfigError(GfmError):
    """A configuration or gains document is malformed.

    ``key`` and ``line`` identify the offending entry when known.
    """

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.key = key
        self.line = line


class AuditError(GfmError):
    """A controller consumes a signal that is not local to its converter."""

    def __init__(self, message, offending=()):
        super().__init__(message)
        self.offending = list(offending)
