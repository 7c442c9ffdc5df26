"""Exception hierarchy. Every error carries a short machine-readable code
that the CLI emits on stderr."""


class HistosimError(Exception):
    """Base class for all library errors."""

    code = "error"

    def __init__(self, message: str, *, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ManifestError(HistosimError):
    """Malformed or contract-violating manifest content."""

    code = "manifest"


class ImageIOError(HistosimError):
    """Unreadable or unsupported image file."""

    code = "image-io"


class ConfigError(HistosimError):
    """Malformed preprocessing configuration code."""

    code = "config"


class MetricInputError(HistosimError):
    """Metric called with inputs violating its preconditions."""

    code = "metric-input"


class ExtractorError(HistosimError):
    """Feature extractor could not be loaded or run."""

    code = "extractor"


class CalibrationError(HistosimError):
    """Head calibration received unusable training data."""

    code = "calibration"


class DegenerateCurveError(HistosimError):
    """Sensitivity curve has zero dynamic range or zero level spacing."""

    code = "degenerate-curve"


class UndefinedCorrelationError(HistosimError):
    """Rank correlation undefined (constant input or length mismatch)."""

    code = "undefined-correlation"


class AllConfigsRejectedError(HistosimError):
    """No preprocessing configuration survived the screening stage."""

    code = "all-configs-rejected"


class CurationError(HistosimError):
    """Batch scoring or filtering could not complete."""

    code = "curation"
