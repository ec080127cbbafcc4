"""Exception types shared across the package.

The command-line layer maps these onto process exit codes; everything else
raises them directly.
"""

__all__ = [
    "QkdcertError",
    "LayoutError",
    "StateError",
    "ChannelError",
    "DimensionCapError",
    "ConsistencyError",
    "ConfigError",
]


class QkdcertError(Exception):
    """Base class for all package-specific errors."""


class LayoutError(QkdcertError):
    """Subsystem labels or dimensions do not line up."""


class StateError(QkdcertError):
    """A matrix fails the density-operator contract (Hermitian, unit trace, PSD)."""


class ChannelError(QkdcertError):
    """A Kraus family fails the completeness contract, or channel wiring is invalid."""


class DimensionCapError(QkdcertError):
    """An operation would exceed the configured total-dimension cap."""


class ConsistencyError(QkdcertError):
    """A scenario fails one of its verification preconditions."""


class ConfigError(QkdcertError):
    """A configuration document is malformed or incomplete."""
