"""Deterministic simulator of federated continual learning over payment streams.

Clients train autoencoders on per-department payment activities, a central
server aggregates them with a pluggable federation strategy, and anomaly
detection quality is scored on the audit client after every experience.
"""

__version__ = "0.1.0"

from fedledger.errors import (
    ConfigError,
    DataError,
    FedledgerError,
    InjectionError,
    NumericError,
    ProtocolError,
    SchemaError,
    ShapeError,
)

__all__ = [
    "__version__",
    "FedledgerError",
    "ConfigError",
    "DataError",
    "SchemaError",
    "InjectionError",
    "ShapeError",
    "NumericError",
    "ProtocolError",
]
