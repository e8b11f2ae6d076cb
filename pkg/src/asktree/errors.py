"""Exception hierarchy shared across the package."""


class AskTreeError(Exception):
    """Base class for all package errors."""


# --- data loading / partitioning ---------------------------------------


class SchemaError(AskTreeError):
    pass


class IntegrityError(AskTreeError):
    pass


class EmptyDatasetError(AskTreeError):
    pass


class StratificationError(AskTreeError):
    pass


class UnsupportedSchemeError(AskTreeError):
    pass


class SynthSpecError(AskTreeError):
    pass


# --- predicate DSL ------------------------------------------------------


class DslError(AskTreeError):
    pass


class DslSyntaxError(DslError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class DslTypeError(DslError):
    def __init__(self, message: str, feature: str):
        super().__init__(message)
        self.feature = feature


# --- gateway ------------------------------------------------------------


class TemplateError(AskTreeError):
    pass


class BackendError(AskTreeError):
    pass


class TransientBackendError(BackendError):
    """Retryable failure (timeouts, rate limits, 5xx)."""


class FatalBackendError(BackendError):
    """Non-retryable failure (auth, misconfiguration)."""


# --- pipeline stages ----------------------------------------------------


class EmptyInsightError(AskTreeError):
    pass


class InvalidCountsError(AskTreeError):
    pass


class InvalidPartitionError(AskTreeError):
    pass


class BuildError(AskTreeError):
    pass


class TreeLoadError(AskTreeError):
    pass


# --- refinement / evaluation / service ----------------------------------


class NodeNotFoundError(AskTreeError):
    pass


class InvalidActionError(AskTreeError):
    pass


class RefinementUnsupportedError(AskTreeError):
    pass


class EvaluationError(AskTreeError):
    pass


class VersionConflictError(AskTreeError):
    pass
