"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so new failure modes should
subclass one of them rather than raising bare builtins.
"""


class ConfigError(ValueError):
    """Invalid configuration or geometry (exit code 2)."""


class NumericalError(ArithmeticError):
    """Training produced non-finite values or otherwise diverged (exit code 3)."""

    def __init__(self, message, checkpoint=None, diagnostics=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.diagnostics = diagnostics or {}


class ArtifactError(OSError):
    """Base class for unreadable model artifacts (exit code 4)."""


class ArtifactFormatError(ArtifactError):
    """Missing magic bytes or malformed section layout."""


class VersionMismatchError(ArtifactError):
    """Artifact written by an incompatible format version."""


class ChecksumError(ArtifactError):
    """Stored CRC-32 does not match the payload."""


class TruncatedArtifactError(ChecksumError):
    """File is shorter than its declared length."""
