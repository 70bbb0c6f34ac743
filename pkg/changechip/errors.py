"""
Exception hierarchy for ChangeChip.

Every error raised by the library derives from ChangeChipError so callers
(the CLI in particular) can tell pipeline failures apart from programming
errors. Where a builtin exception fits the failure it is mixed in as well.
"""


class ChangeChipError(Exception):
    """Base class for all library errors"""


class ImageFormatError(ChangeChipError, ValueError):
    """Raised when an image file cannot be read, written or is in an unsupported format"""


class WindowBoundsError(ChangeChipError, IndexError):
    """Raised when a window center or crop rectangle falls outside the image"""


class DimensionMismatchError(ChangeChipError, ValueError):
    """Raised when two arrays that must share a shape do not"""


class RegistrationError(ChangeChipError):
    """Raised when the target image cannot be aligned to the reference"""


class ImageTooSmallError(RegistrationError, ValueError):
    pass


class InsufficientMatchesError(RegistrationError):
    pass


class DegenerateTransformError(RegistrationError, ValueError):
    pass


class ClusteringError(ChangeChipError, ValueError):
    """Raised for invalid PCA / Kmeans / window parameters"""


class AnalysisError(ChangeChipError, ValueError):
    """Raised when class statistics cannot be analysed"""


class DefectSpecError(ChangeChipError, ValueError):
    """Raised when a synthetic defect does not fit the base image"""


class ConfigValidationError(ChangeChipError):
    """Raised when configuration validation fails"""

    def __init__(self, problems):
        self.problems = list(problems)
        message = "Configuration validation failed:\n" + "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(message)


class StageError(ChangeChipError):
    """Wraps any failure inside run_pipeline with the name of the failing stage"""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
