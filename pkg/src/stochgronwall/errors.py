"""Exception types shared across the package."""


class InvalidParameter(ValueError):
    """A numeric argument lies outside the domain of the formula."""


class ToleranceNotReached(RuntimeError):
    """Adaptive quadrature exhausted its interval budget."""


class UnknownModel(KeyError):
    pass


class CertificateViolation(RuntimeError):
    """A certificate failed its pointwise self-test."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class FiniteDifferenceMismatch(RuntimeError):
    """Analytic gradient/Hessian disagrees with central finite differences."""


class NonFiniteState(FloatingPointError):
    def __init__(self, message, paths=()):
        super().__init__(message)
        self.paths = tuple(paths)


class NotEvaluable(RuntimeError):
    """A bound cannot be evaluated without giving up its one-sided meaning."""


class ConfigError(ValueError):
    pass
