"""Exception taxonomy shared by the library and the CLI.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class MultiResCNNError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MultiResCNNError):
    """Invalid configuration: bad keys, inconsistent shapes, bad presets."""


class DataError(MultiResCNNError):
    """Invalid or unreadable input data (corpora, embeddings, checkpoints)."""


class NumericError(MultiResCNNError):
    """Non-finite values or a failed numeric contract during computation."""
