"""Exception hierarchy.

Each class carries a ``category`` string that the command line reports and
maps to a distinct exit status.
"""


class PduPowerError(Exception):
    category = "error"
    exit_code = 1


class ConfigError(PduPowerError, ValueError):
    category = "config"
    exit_code = 2


class MissingInputError(PduPowerError, FileNotFoundError):
    category = "missing-input"
    exit_code = 3


class MissingModelError(PduPowerError):
    category = "missing-model"
    exit_code = 4


class SchemaError(PduPowerError, ValueError):
    category = "schema"
    exit_code = 5


class UnsupportedVersionError(SchemaError):
    category = "version"
    exit_code = 6


class IntegrityError(PduPowerError):
    category = "integrity"
    exit_code = 7

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ContractError(PduPowerError, ValueError):
    """A caller violated an input precondition (ordering, alignment, ...)."""

    category = "contract"
    exit_code = 8


class DomainError(ContractError):
    category = "domain"


class TrainingError(PduPowerError):
    category = "training"
    exit_code = 9


class PlacementError(PduPowerError):
    category = "placement"
    exit_code = 10
