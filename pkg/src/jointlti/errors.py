"""Exception hierarchy shared by every module of the package."""


class JointLTIError(Exception):
    """Base class for all package errors."""


class ArgumentError(JointLTIError, ValueError):
    """Invalid dimensions, counts or parameter values."""


class NumericalError(JointLTIError, ArithmeticError):
    """Base class for failures that originate in the numerics."""


class DegenerateSystemError(NumericalError):
    """A transition matrix is nilpotent to working precision."""


class SimulationOverflowError(NumericalError):
    """A simulated state became non-finite.

    Attributes
    ----------
    step : int
        Time index ``t`` of the first non-finite state ``x(t)``.
    system : int or None
        System index, set when raised from a bundle simulation.
    """

    def __init__(self, step, system=None):
        self.step = step
        self.system = system
        where = f" in system {system}" if system is not None else ""
        super().__init__(f"non-finite state at step t={step}{where}")


class RankDeficiencyError(NumericalError):
    """A least-squares normal matrix is numerically singular and no ridge was given."""

    def __init__(self, message, system=None, step=None):
        self.system = system
        self.step = step
        super().__init__(message)


class DivergenceError(NumericalError):
    """Gradient-based optimisation produced a non-finite loss."""


class JordanUnavailableError(NumericalError):
    """The Jordan structure of a defective matrix was requested without metadata."""


class DomainError(NumericalError, ValueError):
    """A spectral quantity was requested outside its domain of definition."""


class NoiseUnavailableError(JointLTIError):
    """The noise draws behind a bundle were not retained."""
