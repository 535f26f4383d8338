# beamcast/errors.py

from typing import Any, Optional


class BeamcastError(Exception):
    """Base class for every error raised by beamcast."""


class ConfigError(BeamcastError, ValueError):
    """Invalid configuration document, settings file or command-line flag."""


class GeometryError(BeamcastError, ValueError):
    """Cluster geometry that cannot host the requested construction."""


class ChannelError(BeamcastError, ValueError):
    """Channel coefficient requested at a non-positive distance."""


class PartitionError(BeamcastError, ValueError):
    """Block partition that is not a disjoint cover of the matrix indices."""


class RegimeError(BeamcastError, ValueError):
    """Parameters outside the regime in which a bound is defined."""


class ConvergenceError(BeamcastError, RuntimeError):
    """Power iteration ran out of iterations.

    The last estimate is kept on ``estimate`` so callers can still report it.
    """

    def __init__(self, message: str, estimate: Optional[Any] = None):
        super().__init__(message)
        self.estimate = estimate
