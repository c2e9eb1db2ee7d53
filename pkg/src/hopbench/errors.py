"""Exception hierarchy and process exit codes shared across the pipeline."""

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DEPENDENCY = 3
EXIT_PROVIDER = 4


class HopbenchError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ValidationError(HopbenchError):
    """Bad input: violated precondition, malformed config, out-of-range value."""

    exit_code = EXIT_VALIDATION


class DependencyError(HopbenchError):
    """A required upstream artifact is missing; carries the command to run."""

    exit_code = EXIT_DEPENDENCY

    def __init__(self, message: str, required_command: str | None = None):
        super().__init__(message)
        self.required_command = required_command


class StaleRunError(HopbenchError):
    """Config digest no longer matches the run manifest (use --force to override)."""

    exit_code = EXIT_DEPENDENCY


class ProviderError(HopbenchError):
    """Base class for chat/embedding provider failures."""

    exit_code = EXIT_PROVIDER


class TransportError(ProviderError):
    """Network failure or timeout that persisted through the retry budget."""


class ProtocolError(ProviderError):
    """Provider responded, but not with the JSON shape we asked for."""


class ProviderFaultError(ProviderError):
    """Provider returned internally inconsistent data (e.g. mixed dimensions)."""


class StageError(HopbenchError):
    """A pipeline stage failed partway; may carry a partial result for resume."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class ExtractionError(StageError):
    """Triplet extraction for one node failed after re-asks."""


class DegenerateFitError(HopbenchError):
    """Mixture fit collapsed despite covariance regularization."""

    exit_code = EXIT_VALIDATION


class NoHardNegativeError(HopbenchError):
    """Chain has no sibling branch to sample a hard negative from."""


class ItemDiscardedError(HopbenchError):
    """Synthesized item failed a hard constraint after retries; carries the reason."""

    def __init__(self, message: str, reason: str):
        super().__init__(message)
        self.reason = reason


class AdjudicationError(HopbenchError):
    """Every ensemble member failed to return parseable adjudication JSON."""


class UndefinedRateError(HopbenchError):
    """A rate with an empty denominator (e.g. zero errors); reported as an em dash."""


class SnapshotError(HopbenchError):
    """JSONL snapshot could not be read back (bad line or schema mismatch)."""

    exit_code = EXIT_VALIDATION

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number


class MigrationError(SnapshotError):
    """Snapshot schema version differs from the one this build writes."""
