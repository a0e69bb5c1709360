"""Exception hierarchy shared by the solvers, estimators and CLI."""


class SFReinforceError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SFReinforceError, ValueError):
    """Inconsistent shapes, invalid probabilities or bad settings."""


class ProperPolicyError(SFReinforceError, ArithmeticError):
    """The policy is not proper: the linear system over nonterminal states is singular.

    Attributes
    ----------
    rcond : float
        Reciprocal condition number estimate of ``I - P_phi``.
    """

    def __init__(self, message, rcond=float("nan")):
        super().__init__(message)
        self.rcond = rcond


class NonConvergenceError(SFReinforceError, RuntimeError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class NumericAbort(SFReinforceError, FloatingPointError):
    """A non-finite value showed up during training."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
