"""Exception types shared across the engine.

Every error carries a stable machine-readable ``code`` so the CLI and the
HTTP service can map failures to distinct error identifiers without string
matching on messages.
"""


class ExitBenchError(Exception):
    code = "error"


class UnreadableFileError(ExitBenchError):
    code = "unreadable-file"


class SpecValidationError(ExitBenchError):
    """A model spec violates an invariant. ``field`` names the offender."""

    code = "invalid-spec"

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class UnknownModuleError(ExitBenchError):
    code = "unknown-module"

    def __init__(self, module_id: str, context: str = ""):
        msg = f"unknown module id {module_id!r}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)
        self.module_id = module_id


class ShapeError(ExitBenchError):
    code = "bad-shape"


class TraceParseError(ExitBenchError):
    code = "trace-parse"

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = ""
        if line is not None:
            loc = f" at line {line}" + (f", column {column}" if column is not None else "")
        super().__init__(message + loc)
        self.line = line
        self.column = column


class EmptySubmissionError(ExitBenchError):
    code = "empty-submission"


class GoldFileError(ExitBenchError):
    code = "invalid-gold-file"


class MetricError(ExitBenchError):
    code = "metric-error"


class UndefinedCorrelationError(MetricError):
    code = "undefined-correlation"


class CurveError(ExitBenchError):
    code = "invalid-curve"


class PolicyMismatchError(ExitBenchError):
    code = "policy-mismatch"


class InvalidDistribution(ExitBenchError):
    code = "invalid-distribution"


class LogitsFileError(ExitBenchError):
    code = "invalid-logits-file"


class TrainingDivergence(ExitBenchError):
    code = "training-divergence"
