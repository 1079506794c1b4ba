"""Exception hierarchy shared across the package."""


class Learn2HelpError(Exception):
    """Base class for all package errors."""


class ConfigError(Learn2HelpError, ValueError):
    """A parameter or configuration value violates its stated invariant."""


class ContractError(Learn2HelpError, ValueError):
    """An operation was called in a way its contract forbids (dimension
    mismatch, stale tape, gradient length mismatch, ...)."""


class IngestionError(Learn2HelpError, ValueError):
    """A dataset file is malformed; the message names the offending line."""


class EstimationError(Learn2HelpError, RuntimeError):
    """A measurement degenerated (e.g. all risk gaps were exactly zero)."""
