"""Exception hierarchy shared across the package.

CLI exit codes map onto these classes: usage/config problems exit 2,
data/format problems exit 3, contract violations exit 4.
"""


class WavecasterError(Exception):
    """Base class for all package errors."""


class ConfigError(WavecasterError):
    """Invalid configuration: unknown key, out-of-range value, bad combination."""


class ShapeError(WavecasterError):
    """Tensor or grid shapes incompatible with the requested operation."""


class FormatError(WavecasterError):
    """Malformed binary file (bad magic, version, truncated payload)."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(WavecasterError):
    """Missing or inconsistent data (e.g. wind unavailable for a rollout step)."""


class DomainError(WavecasterError):
    """Inputs outside the mathematical domain of an operation (all-land mask, empty selection)."""


class ContractError(WavecasterError):
    """A caller broke an API contract (non-scalar loss, mismatched grids, wrong model kind)."""
