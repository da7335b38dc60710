"""Exception hierarchy shared by every module."""


class DriftCrbError(Exception):
    """Base class for all package errors."""


class DomainError(DriftCrbError, ValueError):
    """An argument lies outside the domain where the computation is defined."""

    def __init__(self, name: str, message: str):
        self.name = name
        super().__init__(f"{name}: {message}")


class InfiniteCrb(DriftCrbError):
    """Random-walk drift (rho = 1) with an uncalibrated sensor: no finite bound exists."""


class SingularCovariance(DriftCrbError):
    """A covariance matrix failed Cholesky factorization."""


class SingularFim(DriftCrbError):
    """The Fisher information matrix is singular or too ill-conditioned to invert."""


class MixedRegime(DomainError):
    """A network mixes stationary (rho < 1) and random-walk (rho = 1) sensors."""

    def __init__(self, message: str):
        super().__init__("sensors", message)


class NegativeVariance(DriftCrbError):
    """A second-order closed form produced a nonpositive variance."""
