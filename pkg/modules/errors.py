#!/usr/bin/env python3
"""
errors.py - Exception types shared by the kv_lab modules

Every error can describe itself as a dict so the CLI can drop a
machine-readable error report next to the run artifacts.
"""

from typing import Dict, Optional, Sequence


class KVLabError(Exception):
    """Base class for all kv_lab failures"""

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self) -> Dict:
        report = {'error': type(self).__name__, 'message': self.message}
        for key, value in self.context.items():
            report[key] = _jsonable(value)
        return report


class GeometryError(KVLabError, ValueError):
    """Invalid domain, grid, region or preset parameters"""


class OperatorError(KVLabError, ValueError):
    """Dimension mismatch or invalid coefficient field during assembly"""


class ParameterError(KVLabError, ValueError):
    """A numerical parameter violates its precondition"""


class SolverError(KVLabError, RuntimeError):
    """A linear solve failed or missed its residual tolerance"""

    def __init__(self, message: str, residual: Optional[float] = None, **context):
        super().__init__(message, residual=residual, **context)
        self.residual = residual


class SingularSystemError(SolverError):
    """The shifted system (i*lambda - A_h) is numerically singular"""

    def __init__(self, message: str, growth: Optional[float] = None, **context):
        super().__init__(message, growth=growth, **context)
        self.growth = growth


class RootPolishError(KVLabError, RuntimeError):
    """Newton polishing left a root above the residual tolerance"""

    def __init__(self, message: str, residuals: Sequence[float] = (), **context):
        super().__init__(message, residuals=list(residuals), **context)
        self.residuals = list(residuals)


class BranchSelectionError(KVLabError, RuntimeError):
    """Two roots are equally close to i*mu and no branch can be chosen"""


class FitError(KVLabError, ValueError):
    """Regression window is empty or too short"""


class ConfigError(KVLabError, ValueError):
    """Experiment configuration failed validation"""

    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}", field=field, reason=reason)
        self.field = field
        self.reason = reason


class ReportError(KVLabError, ValueError):
    """Manifests missing or inconsistent"""


class PipelineError(KVLabError, RuntimeError):
    """Unexpected failure inside a pipeline, wrapping the original exception"""

    @classmethod
    def wrap(cls, error: Exception) -> 'PipelineError':
        wrapped = cls(f"{type(error).__name__}: {error}", cause=type(error).__name__)
        wrapped.__cause__ = error
        return wrapped


def _jsonable(value):
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, complex):
        return [value.real, value.imag]
    if hasattr(value, 'tolist'):
        return _jsonable(value.tolist())
    if value is None or isinstance(value, (str, int, float, bool, dict)):
        return value
    return str(value)
