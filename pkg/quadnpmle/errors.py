"""
Exception types for quadnpmle.

Validation problems subclass ValueError and numeric failures subclass
RuntimeError so callers that only know the builtins still catch them.
"""

from __future__ import annotations

from typing import Any


class QuadNpmleError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(QuadNpmleError, ValueError):
    """Input, parameter or domain violation (CLI exit code 2)."""


class ConfigError(ValidationError):
    """Malformed configuration value or file."""


class NumericalError(QuadNpmleError, RuntimeError):
    """
    Numeric failure (CLI exit code 3).

    Args:
        message: Human-readable description
        diagnostics: Extra context such as iteration counts or best residual
    """

    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None):
        super().__init__(message)
        self.diagnostics: dict[str, Any] = dict(diagnostics or {})


class IntegrationError(NumericalError):
    """Adaptive integration missed its tolerance; carries the achieved estimate."""

    def __init__(self, message: str, estimate: float, error: float):
        super().__init__(message, {"estimate": estimate, "error": error})
        self.estimate = estimate
        self.error = error
