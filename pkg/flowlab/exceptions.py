"""
Exception hierarchy for the flow laboratory
"""


class FlowLabError(Exception):
    """Base class for every error raised by flowlab"""


class ConfigurationError(FlowLabError):
    """Invalid parameters, experiment configs or quadrature settings"""


class DomainError(FlowLabError):
    """A point lies outside the set where a quantity is defined"""


class NonFiniteFieldError(FlowLabError):
    """A vector field returned a non-finite value"""

    def __init__(self, t, x, message=None):
        self.t = t
        self.x = x
        super().__init__(message or f"Non-finite field value at t={t!r}, x={list(x)!r}")


class IntegrationError(FlowLabError):
    """The ODE integrator could not proceed"""


class GeometryError(FlowLabError):
    """A trajectory left the tube it is constructed to stay in"""


class PreconditionError(FlowLabError):
    """The hypotheses of a diagnostic check are not met"""


class ExperimentPhaseError(FlowLabError):
    """A numerical error tagged with the experiment phase it happened in"""

    def __init__(self, phase, cause):
        self.phase = phase
        self.cause = cause
        super().__init__(f"[{phase}] {type(cause).__name__}: {cause}")
