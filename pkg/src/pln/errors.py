"""Exception hierarchy. Every error raised on purpose derives from PLNError."""


class PLNError(Exception):
    pass


class ModelEvaluationError(PLNError):
    """A model produced a non-finite value or gradient."""


class IntegrationError(PLNError):
    """The integrator stopped before reaching the final time."""

    def __init__(self, message, t_reached=None, last_state=None):
        super().__init__(message)
        self.t_reached = t_reached
        self.last_state = last_state


class SectionError(PLNError):
    """A transversal frame could not be built (rank deficiency or bad conditioning)."""


class LeafReturnError(PLNError):
    """Newton on the return time along the torus action failed."""


class TrustRegionError(PLNError):
    """A point lies outside the section's trust radius."""


class UnsupportedModelError(PLNError):
    pass


class ConditionNViolation(PLNError):
    """``E - A`` is singular to working tolerance."""


class ConvergenceError(PLNError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class PartialLiftError(PLNError):
    def __init__(self, message, phi_index=None):
        super().__init__(message)
        self.phi_index = phi_index


class DegenerateClassError(PLNError):
    """Winding with n_s = 0: the transverse multipliers are all one."""


class DegenerateFrequencyError(PLNError):
    pass


class SingularBlockError(PLNError):
    def __init__(self, message, det=None):
        super().__init__(message)
        self.det = det


class ConfigError(PLNError):
    pass
