"""Exception types shared across the package.

Everything raised here derives from GemError so the CLI can map any
expected runtime failure to exit code 1 with a one-line diagnostic.
"""


class GemError(Exception):
    """Base class for runtime failures surfaced to the CLI."""


class CorpusError(GemError):
    """Malformed corpus file or invalid article structure."""


class TokenizerError(GemError):
    pass


class ModelError(GemError):
    pass


class TrainingError(GemError):
    pass


class GenerationError(GemError):
    pass


class PipelineError(GemError):
    pass


class MetricsError(GemError):
    pass


class ConfigError(GemError):
    """Bad CLI flag combination or unknown config-file key."""
