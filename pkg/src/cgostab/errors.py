"""Exception hierarchy shared by all cgostab modules."""


class CgoStabError(Exception):
    """Base class for every error raised by the package."""


class DomainError(CgoStabError, ValueError):
    """A point lies outside the computational cube."""


class ConfigurationError(CgoStabError, ValueError):
    """Invalid potential, experiment or resolution settings."""


class KindError(CgoStabError, ValueError):
    """Incompatible lattice kinds or cube sizes."""


class UnsupportedOrderError(CgoStabError, ValueError):
    pass


class ParameterError(CgoStabError, ValueError):
    pass


class FrequencyTooLargeError(CgoStabError, ValueError):
    """The square-root argument in the theta-pair construction is not positive."""


class FrameError(CgoStabError, ValueError):
    """A complex direction is not aligned with the lattice shift axis."""


class CertificationError(CgoStabError):
    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class SingularSymbolError(CgoStabError, ZeroDivisionError):
    pass


class PreconditionError(CgoStabError, ValueError):
    pass


class NonConvergenceError(CgoStabError, RuntimeError):
    def __init__(self, message, kappas=()):
        super().__init__(message)
        self.kappas = list(kappas)


class CalibrationError(CgoStabError, RuntimeError):
    pass


class AliasingError(CgoStabError, ValueError):
    """Sphere quadrature too coarse for the requested harmonic degree."""


class RecordMismatchError(CgoStabError, ValueError):
    pass


class DistanceError(CgoStabError, ZeroDivisionError):
    pass


class SmallnessViolation(CgoStabError, ValueError):
    def __init__(self, message, threshold=None):
        super().__init__(message)
        self.threshold = threshold


class BudgetExhausted(CgoStabError, RuntimeError):
    pass


class ReconstructionError(CgoStabError, RuntimeError):
    pass
