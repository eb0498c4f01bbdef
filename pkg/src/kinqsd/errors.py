"""Exception hierarchy."""
from __future__ import annotations


class KinQSDError(Exception):
    """Base class for all engine errors."""


class ParameterError(KinQSDError, ValueError):
    pass


class EvaluationError(KinQSDError):
    """A coefficient or test function returned a non-finite value."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class DomainError(KinQSDError, ValueError):
    pass


class BlowUpError(KinQSDError):
    """Raised when a trajectory leaves the |x| <= 1e12 guard or turns non-finite."""

    def __init__(self, message, last_state=None, index=None):
        super().__init__(message)
        self.last_state = last_state
        self.index = index


class ConstructionError(KinQSDError):
    """A Lyapunov construction could not be completed; ``report`` holds the failing check."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ExtinctionError(KinQSDError):
    def __init__(self, message, kill_count=0, time=None):
        super().__init__(message)
        self.kill_count = kill_count
        self.time = time


class InsufficientSurvivorsError(KinQSDError):
    def __init__(self, message, survival_fraction=None):
        super().__init__(message)
        self.survival_fraction = survival_fraction


class InsufficientExitsError(KinQSDError):
    def __init__(self, message, survival_fraction=None):
        super().__init__(message)
        self.survival_fraction = survival_fraction


class NonExponentialRegimeError(KinQSDError):
    pass


class InconclusiveError(KinQSDError):
    pass
