"""Error taxonomy shared by the library, the service and the CLI.

Every exception carries a coarse category that maps onto the process exit
code contract: config -> 1, data -> 2, runtime -> 3.
"""


class FedledgerError(Exception):
    category = "runtime"
    exit_code = 3


class ConfigError(FedledgerError):
    """Invalid or inconsistent run configuration."""

    category = "config"
    exit_code = 1

    def __init__(self, message, pointer=None):
        super().__init__(message)
        self.pointer = pointer


class DataError(FedledgerError):
    """Missing, unreadable or structurally unusable input data."""

    category = "data"
    exit_code = 2


class SchemaError(DataError):
    """Input data does not match the expected attribute structure."""


class InjectionError(DataError):
    """Anomaly injection could not satisfy its constraints."""


class ShapeError(FedledgerError):
    """Array dimensions disagree with the declared architecture."""


class NumericError(FedledgerError):
    """Non-finite values encountered where finite ones are required."""


class ProtocolError(FedledgerError):
    """Federation protocol contract violated (participation, ordering)."""
