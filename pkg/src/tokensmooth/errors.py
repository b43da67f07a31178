"""Exception hierarchy. Each top-level class maps to one CLI exit code."""


class TokenSmoothError(Exception):
    exit_code = 1


class ConfigError(TokenSmoothError):
    """Bad user configuration: range specs, hyperparameters, sampling settings."""

    exit_code = 2


class InputError(TokenSmoothError):
    """A file could not be read or written."""

    exit_code = 3


class ValidationError(TokenSmoothError):
    """Inputs were readable but violate a structural contract."""

    exit_code = 4


class RangeParseError(ConfigError):
    pass


class DecodeError(ValidationError):
    pass


class ContainerError(ValidationError):
    """Malformed tensor container. ``kind`` names the failure for callers that branch on it."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class ResolutionError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class RefusalError(ValidationError):
    """The edit was refused to protect the checkpoint (tied head, repeated edit)."""


class IntegrityError(ValidationError):
    pass
