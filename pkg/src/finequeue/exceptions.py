"""Errors raised by finequeue."""

from typing import Any, Dict, Optional


class QueueError(Exception):
    """Base class of all finequeue errors."""


class ValidationError(QueueError, ValueError):
    """Malformed input: configuration, distribution or profile."""


class DomainError(QueueError, ValueError):
    """A quantity was requested outside its mathematical domain."""


class OutOfRegimeError(DomainError):
    """A closed-form formula was evaluated outside the regime it describes."""


class InvariantError(QueueError, RuntimeError):
    """An internal invariant of the game state was broken."""


class ResourceLimitError(QueueError):
    """A brute-force computation was requested on a too large instance."""


class TrainingDivergedError(QueueError, RuntimeError):
    """Policy optimisation produced a non-finite loss."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None) -> None:
        """Initialize class.

        :param message: Human readable description
        :param diagnostics: Loss values and gradient norms at the failing update
        """
        super().__init__(message)
        self.diagnostics = diagnostics or {}
