class SubjectInpaintError(Exception):
    pass


class ConfigError(SubjectInpaintError):
    pass


class PipelineError(SubjectInpaintError):
    pass


class DimensionMismatchError(PipelineError, ValueError):
    pass


class ScheduleRangeError(PipelineError, ValueError):
    pass


class NonFiniteValueError(PipelineError, ValueError):
    pass


class PromptIntegrityError(PipelineError, ValueError):
    pass


class BackboneUnavailableError(PipelineError):
    pass


class EmptyMaskError(PipelineError, ValueError):
    pass


class GeometryMismatchError(PipelineError, ValueError):
    pass


class ZeroDirectionError(PipelineError, ValueError):
    pass


class VlmUnavailableError(PipelineError):
    pass


class MalformedVlmResponseError(PipelineError):
    pass


class InsufficientCombinationsError(PipelineError):
    pass


class IdentityTokenLeakError(PipelineError):
    pass


class RegularizationError(PipelineError):
    pass


class EmptyBatchError(PipelineError, ValueError):
    pass


class DivergenceError(PipelineError):
    pass


class ZeroNormError(PipelineError, ValueError):
    pass


class IdMisalignmentError(PipelineError):
    def __init__(self, missing_ids):
        self.missing_ids = sorted(missing_ids)
        super().__init__(
            "Sample ids are not aligned, missing: {}".format(
                ", ".join(self.missing_ids)
            )
        )


class EmptyResultsError(PipelineError):
    pass


class AnnotationError(PipelineError):
    def __init__(self, failures):
        self.failures = failures
        super().__init__(
            "Unreadable annotations for {} file(s): {}".format(
                len(failures),
                "; ".join("{}: {}".format(k, v) for k, v in failures),
            )
        )


class InsufficientBackgroundsError(PipelineError):
    pass


class MultiInpaintError(PipelineError):
    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(
            "Request {} failed: {}".format(index, cause)
        )
