#errors.py
from typing import List, Optional


class HrmaLabError(RuntimeError):
    """Base class for every failure raised by the laboratory."""


class InputError(HrmaLabError):
    """Malformed arguments: dimension mismatch, empty sets, bad ladders."""


class DomainError(HrmaLabError):
    """Evaluation outside the domain of a function (e.g. log of a non-positive facet value)."""


class NumericalDomainError(HrmaLabError):
    """An evaluator produced a non-finite value."""


class PreconditionError(HrmaLabError):
    """A documented precondition of an operation does not hold."""


class ConsistencyError(HrmaLabError):
    """Internal numerical consistency check failed."""


class QuadratureError(HrmaLabError):
    def __init__(self, message: str, *, estimate=None, error_estimate: Optional[float] = None,
                 rel_tol: Optional[float] = None):
        super().__init__(message)
        self.estimate = estimate
        self.error_estimate = error_estimate
        self.rel_tol = rel_tol


class ConfigError(HrmaLabError):
    def __init__(self, message: str, *, keys: Optional[List[str]] = None):
        super().__init__(message)
        self.keys: List[str] = list(keys or [])
