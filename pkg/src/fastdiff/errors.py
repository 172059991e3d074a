"""Exception hierarchy shared by every fastdiff module."""


class FastDiffError(Exception):
    """Base class for all errors raised by fastdiff."""


class ConstraintViolation(FastDiffError, ValueError):
    """A parameter inequality required by the theory does not hold.

    Attributes
    ----------
    name : str
        Short identifier of the violated inequality.
    lhs, rhs : float
        The two sides that were compared.
    """

    def __init__(self, name, lhs, rhs, relation="<"):
        self.name = name
        self.lhs = lhs
        self.rhs = rhs
        self.relation = relation
        super().__init__(f"constraint {name!r} violated: need {lhs!r} {relation} {rhs!r}")


class DomainError(FastDiffError, ValueError):
    """A closed-form function was evaluated outside its domain."""


class EnvelopeError(FastDiffError, ValueError):
    """Lower and upper initial-data envelopes cross."""


class BadGeometry(FastDiffError, ValueError):
    pass


class ResolutionError(FastDiffError, ValueError):
    pass


class SizeMismatch(FastDiffError, ValueError):
    pass


class GridMismatch(FastDiffError, ValueError):
    pass


class NewtonDivergence(FastDiffError, RuntimeError):
    pass


class NegativeValue(NewtonDivergence):
    """Newton converged to a state with a non-positive cell."""


class StepFailure(FastDiffError, RuntimeError):
    """Adaptive stepping shrank dt below ``dt_min``."""

    def __init__(self, msg, t=None, dt=None):
        self.t = t
        self.dt = dt
        super().__init__(msg)


class PreconditionError(FastDiffError, ValueError):
    """A verification check was requested outside its hypotheses."""


class WindowTooSmall(FastDiffError, ValueError):
    pass


class ParseError(FastDiffError, ValueError):
    def __init__(self, msg, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{msg} ({', '.join(where)})" if where else msg)


class IoError(FastDiffError, OSError):
    """Output could not be written or read back."""
