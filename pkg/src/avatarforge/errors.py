"""Exception hierarchy shared across the package."""


class AvatarForgeError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(AvatarForgeError):
    """An asset or parameter block violates a documented invariant."""


class AssetParseError(AvatarForgeError):
    """A body asset or pose library file is malformed.

    Carries file/line context in the message so the offending record can
    be located without a debugger.
    """

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}:" if line is None else f"{path}:{line}:"
        super().__init__(f"{loc} {message}" if loc else message)
        self.path = path
        self.line = line


class ConfigError(AvatarForgeError):
    """A run configuration is invalid; message lists every offending key."""


class CheckpointError(AvatarForgeError):
    """A checkpoint file is missing, corrupt, or version-incompatible."""


class GuidanceError(AvatarForgeError):
    """A guidance oracle failed (timeout, protocol, transport).

    Retriable: the training loop skips the iteration, logs, and continues.
    """


class TrainingError(AvatarForgeError):
    """A training run cannot proceed (skip budget exceeded, locked output,
    missing pose library, ...)."""
