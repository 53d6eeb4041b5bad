"""Exception hierarchy shared by all unitrans modules.

The CLI maps UsageError/ConfigurationError to exit code 1 and everything
else derived from UnitransError to exit code 2.
"""

from __future__ import annotations


class UnitransError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(UnitransError):
    """A config value violates its contract. Message names the field."""


class DataError(UnitransError):
    """Corpus or checkpoint content is inconsistent or unreadable."""


class InputError(UnitransError):
    """A runtime input (features, sequence) violates a model bound."""


class UsageError(UnitransError):
    """An API or CLI call violates a precondition."""


class TrainingError(UnitransError):
    """Training failed mid-step; carries the offending sample ids."""

    def __init__(self, message: str, sample_ids: list[str] | None = None):
        super().__init__(message)
        self.sample_ids = sample_ids or []
