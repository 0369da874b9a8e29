#!/usr/bin/env python3
"""
Exception hierarchy for the AdaMVE gridworld library.

Every error carries a human-readable message plus the list of individual
problems that caused it, so callers can report all of them at once.
"""

from typing import List, Optional


class AdaMVEError(Exception):
    """Base exception with an optional list of collected error details"""

    def __init__(self, message: str, errors: Optional[List[str]] = None):
        super().__init__(message)
        self.errors = errors or []

    def one_line(self) -> str:
        """Single-line summary used by the CLI exit path"""
        if self.errors:
            return f"{self} ({'; '.join(self.errors)})"
        return str(self)


class ConfigError(AdaMVEError):
    """Invalid experiment or agent configuration"""


class GridError(AdaMVEError):
    """Invalid grid specification, layout, or environment state"""


class ModelError(AdaMVEError):
    """Unsupported operation on a dynamics model"""


class ApproximatorError(AdaMVEError):
    """Shape, width, target or checkpoint problem in a function approximator"""


class BufferNotReadyError(AdaMVEError):
    """Replay buffer sampled before its warm-up threshold"""


class ModelErrorFunctionError(AdaMVEError):
    """Form/kind mismatch or horizon out of range for a model error function"""


class ExpansionError(AdaMVEError):
    """Invalid input to the value-expansion helpers"""


class BoundViolationError(AdaMVEError):
    """A state with zero cumulative model error has a nonzero value error"""
