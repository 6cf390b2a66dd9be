"""Exception types shared across the package."""


class AorlabError(Exception):
    """Base class for all package-specific errors."""


class ZeroEvidence(AorlabError):
    """An observation has (numerically) zero probability under the current belief."""


class DimensionMismatch(AorlabError):
    """Two vectors that must share a dimension do not."""


class DegenerateClass(AorlabError):
    """A class's total likelihood mass collapsed to zero."""


class InvalidDesign(AorlabError):
    """A world design violates one of its structural constraints."""


class InvalidParams(AorlabError):
    """Planner parameters outside their valid domain."""


class InstanceTooLarge(AorlabError):
    """A brute-force instance exceeds the exact-enumeration budget."""


class ParseError(AorlabError):
    """A persisted file is malformed. Carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class VersionMismatch(AorlabError):
    """A persisted file declares an unsupported format version."""


class ZeroBehaviorProb(AorlabError):
    """A rollout step has zero behavior probability; importance ratio undefined."""


class MissingValue(AorlabError):
    """No labeled value is available for a belief reached in a rollout."""


class ConfigError(AorlabError):
    """A run configuration is invalid. Names the offending field."""
