"""Exception types raised by the toolkit."""


class LimitBicharError(Exception):
    """Base class for all toolkit errors."""


class ContractViolation(LimitBicharError, ValueError):
    """An operation was called outside its documented domain."""


class DegenerateHamiltonField(LimitBicharError):
    """|H_p| fell below the degeneracy threshold (numerically in the double characteristics)."""

    def __init__(self, message, point=None, norm=None):
        super().__init__(message)
        self.point = point
        self.norm = norm


class NormalizationDegenerate(LimitBicharError):
    """|log kappa| is too small for the growth functional to be meaningful."""


class PreparationFailure(LimitBicharError):
    """Newton root solving for tau did not converge or the branch degenerated."""


class ConditioningError(LimitBicharError):
    """A fundamental matrix or its inverse became too large."""


class CausticError(LimitBicharError):
    """The characteristic map of the eikonal fan lost invertibility."""

    def __init__(self, message, t=None, x0=None):
        super().__init__(message)
        self.t = t
        self.x0 = x0


class CutoffPlacementError(LimitBicharError):
    """No room to place the transition intervals of the time cutoff."""


class GridTooCoarse(LimitBicharError):
    """The sampling grid does not resolve the oscillation frequency."""


class PeriodizationError(LimitBicharError):
    """A field carries mass near the boundary of its periodic box."""


class InternalInvariantFailure(LimitBicharError, AssertionError):
    """An invariant that should hold by construction was violated."""


class ScenarioError(LimitBicharError, ValueError):
    """A scenario file failed validation."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
