"""Efficiency benchmark engine for early-exit NLP models."""

from .costmodel import (
    CONVENTION_VERSION,
    ModelSpec,
    ModuleDecl,
    ParamCount,
    count_params,
    forward_flops,
    load_model_spec,
    module_flops,
)
from .metrics import GoldFile, dataset_metric
from .scoring import (
    BaselineCurve,
    PerfPoint,
    assign_track,
    build_baseline_curve,
    baseline_gap_score,
    overall_score,
    evaluate_bundle,
    interpolate,
    pareto_frontier,
)
from .trace import (
    SampleTrace,
    SubmissionFile,
    parse_trace_file,
    serialize_trace,
    submission_flops,
    trace_flops,
)

__all__ = [
    "CONVENTION_VERSION",
    "BaselineCurve",
    "GoldFile",
    "ModelSpec",
    "ModuleDecl",
    "ParamCount",
    "PerfPoint",
    "SampleTrace",
    "SubmissionFile",
    "assign_track",
    "build_baseline_curve",
    "count_params",
    "dataset_metric",
    "baseline_gap_score",
    "overall_score",
    "evaluate_bundle",
    "forward_flops",
    "interpolate",
    "load_model_spec",
    "module_flops",
    "pareto_frontier",
    "parse_trace_file",
    "serialize_trace",
    "submission_flops",
    "trace_flops",
]
