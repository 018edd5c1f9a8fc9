"""Exception types shared across the toolkit.

Simulation failures carry as much partial state as possible so a blown-up
closed loop can be inspected post mortem instead of vanishing in a traceback.
"""


class FinformError(Exception):
    pass


class NonFiniteState(FinformError):
    """A state, stage evaluation, or probe went NaN/Inf during integration.

    The partial trace accumulated up to the failure is attached as `.trace`
    (None when the failure happened before the first accepted step).
    """

    def __init__(self, message, trace=None, t=None):
        super().__init__(message)
        self.trace = trace
        self.t = t


class UnknownSignal(FinformError, KeyError):
    """A named output/accumulator is absent from the trace."""


class DimensionMismatch(FinformError, ValueError):
    """Vector sizes disagree with the declared dimensions."""


class SingularControlDirection(FinformError):
    """|L_g psi| fell at or below the configured floor delta_1."""

    def __init__(self, message, value=None, floor=None):
        super().__init__(message)
        self.value = value
        self.floor = floor


class NoSolution(FinformError):
    """A scalar inversion (bisection) found no root in the allowed range."""


class QuadratureFailure(FinformError):
    """Adaptive quadrature did not converge or met a non-finite integrand."""


class IndependenceViolated(FinformError):
    """The regressor was found to depend on a coordinate it must not."""


class VariantHypothesisViolated(FinformError):
    """A sampled hypothesis behind an estimator variant failed to hold."""


class NotLinearlyParameterized(FinformError):
    """The uncertainty block is not linear in the parameter vector."""


class StageAssumptionViolated(FinformError):
    """A per-stage hypothesis of the cascade assembly failed; carries stage index."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class ParseError(FinformError, ValueError):
    """Scenario file failed to parse; carries line and column when known."""

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class ValidationError(FinformError, ValueError):
    """Scenario content is structurally invalid; message names the key."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
