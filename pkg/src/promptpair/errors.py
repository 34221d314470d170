"""Exception types shared across the package.

The CLI maps these onto exit codes (config 2, dependency 3, numerical 4);
library code raises plain ValueError for ordinary contract violations.
"""


class PromptPairError(Exception):
    """Base class for package-specific failures."""


class ConfigError(PromptPairError):
    """Invalid or inconsistent configuration."""


class DependencyError(PromptPairError):
    """A required artifact (checkpoint, embedding file) is missing."""


class NumericalError(PromptPairError):
    """Non-finite loss or a numeric guard tripped during a run."""


class ArtifactError(PromptPairError):
    """Corrupt, tampered, or version-incompatible artifact on disk."""
