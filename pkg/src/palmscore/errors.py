"""Exception hierarchy.

Every error raised deliberately by the package derives from ``PalmError`` and
carries a stable ``code`` used by the CLI as its exit status.
"""


class PalmError(Exception):
    code = 1
    kind = "error"

    def record(self):
        return {"error": self.kind, "message": str(self), "exit_code": self.code}


class SchemaError(PalmError):
    code = 3
    kind = "schema"


class DimensionError(PalmError):
    code = 3
    kind = "dimension"


class ChecksumError(PalmError):
    code = 4
    kind = "checksum"


class VersionError(PalmError):
    code = 4
    kind = "version"


class DegenerateLabelsError(PalmError):
    code = 5
    kind = "degenerate_labels"


class InsufficientDataError(PalmError):
    code = 5
    kind = "insufficient_data"


class UndefinedMetricError(PalmError):
    """AUC/PRAUC requested with one class; ``brier`` still carries the Brier score."""

    code = 5
    kind = "undefined_metric"
    brier = None


class RankError(PalmError):
    code = 6
    kind = "rank"


class DecompositionError(PalmError):
    code = 6
    kind = "decomposition"


class NumericError(PalmError):
    code = 6
    kind = "numeric"


class InitializationError(NumericError):
    kind = "initialization"


class GvaError(NumericError):
    """A variational fit failed for a specific subject."""

    kind = "gva"

    def __init__(self, message, subject=None, diagnostics=None):
        super().__init__(message)
        self.subject = subject
        self.diagnostics = diagnostics or {}

    def record(self):
        rec = super().record()
        rec["subject"] = self.subject
        rec["diagnostics"] = self.diagnostics
        return rec


class UnsupportedDimensionError(PalmError):
    code = 6
    kind = "unsupported_dimension"


class GenerationError(PalmError):
    code = 6
    kind = "generation"
