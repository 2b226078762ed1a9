"""Exception hierarchy shared across the package."""


class CapmixError(Exception):
    """Base class for all package errors."""


class SchemaError(CapmixError):
    """A scene, manifest, or track file violates its documented schema."""


class LaneLookupError(CapmixError):
    """A lane id does not resolve in the lane graph."""


class InvalidLaneError(CapmixError):
    """A lane's centerline is degenerate (zero total length)."""


class InsufficientDataError(CapmixError):
    """A trajectory is too short to classify (fewer than 2 poses)."""


class CoincidentAgentsError(CapmixError):
    """Relative vector between agents fell below 1 cm; winding is undefined."""


class BackendError(CapmixError):
    """Base class for chat-backend failures."""


class AuthMissingError(BackendError):
    """The auth token environment variable named in the config is unset."""


class BackendUnavailableError(BackendError):
    """All retry attempts exhausted; carries the last cause."""

    def __init__(self, message, attempts=0, cause=None):
        super().__init__(message)
        self.attempts = attempts
        self.cause = cause


class FixtureMissError(BackendError):
    """Scripted backend has no transcript entry for a request digest."""


class PipelineError(CapmixError):
    """A captioning stage failed; names the stage (and frame, if relevant)."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class PreconditionError(PipelineError):
    """A stage's declared inputs are missing or unusable."""


class JudgeParseError(CapmixError):
    """Judge reply did not match the strict score format.

    `kind` is one of: group_count, arity, non_numeric, range.
    """

    def __init__(self, message, kind):
        super().__init__(message)
        self.kind = kind


class EvaluationError(CapmixError):
    """Every judge run failed to produce a parseable reply."""


class UndefinedCorrelationError(CapmixError):
    """Pearson correlation undefined (constant input)."""


class InvalidVideoError(CapmixError):
    """Video metadata is unusable (non-positive duration or fps)."""


class InvalidTrackError(CapmixError):
    """A box track violates its invariants (e.g. out-of-bounds center)."""
