"""Exception types shared across the package."""


class NormlabError(Exception):
    """Base class for all package errors."""


class ConfigError(NormlabError, ValueError):
    """A layer, model, or run was configured with inconsistent arguments."""


class InputError(NormlabError, ValueError):
    """Runtime data fed to an operation is invalid (bad labels, shapes, ...)."""


class DegenerateBatchError(InputError):
    """A normalizing layer received a batch with a single statistic sample.

    Normalizing a single value would always emit zeros; we refuse instead.
    """


class UsageError(NormlabError, RuntimeError):
    """The API was called out of protocol (missing backward, wrong mode, ...)."""


class FormatError(NormlabError, ValueError):
    """A file on disk does not match its expected binary or text format."""
