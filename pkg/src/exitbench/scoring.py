"""Baseline curves, submission scores, Pareto frontiers, and leaderboard tracks.

A baseline model evaluated at each of its exit depths yields per-dataset
(FLOPs, performance) knots; piecewise-linear interpolation turns them into a
baseline performance-FLOPs function. A submission's operating points are
scored as the mean gap to that function at the same FLOPs, so the baseline
scores exactly zero against itself and positive scores mean the submission
oversteps the baseline frontier. Per-dataset scores average (unweighted)
into the overall score across the configured benchmark datasets.

Queries outside the measured FLOPs range clamp to the endpoint value and
raise a non-fatal extrapolation flag rather than erroring: the baseline
function is only defined by its measured coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .costmodel import CONVENTION_VERSION, ModelSpec, ParamCount, count_params
from .errors import (
    CurveError,
    EmptySubmissionError,
    ExitBenchError,
    MetricError,
    UnreadableFileError,
)
from .metrics import GoldFile, dataset_metric
from .trace import SubmissionFile, submission_flops

DEFAULT_BENCHMARK_DATASETS = ("sst2", "imdb", "snli", "scitail", "mrpc", "stsb")

# Leaderboard tracks: models strictly below the threshold qualify.
TRACKS = (
    ("40M", 40_000_000),
    ("55M", 55_000_000),
    ("70M", 70_000_000),
    ("110M", 110_000_000),
)


@dataclass(frozen=True)
class PerfPoint:
    """One operating point: mean FLOPs per sample and performance on the 0-100 scale."""

    flops: float
    perf: float

    def __post_init__(self):
        if not self.flops > 0:
            raise CurveError(f"flops must be positive, got {self.flops!r}")


@dataclass(frozen=True)
class BaselineCurve:
    dataset_id: str
    knots: tuple[PerfPoint, ...]


def build_baseline_curve(points, dataset_id: str) -> BaselineCurve:
    knots = sorted(points, key=lambda p: p.flops)
    if len(knots) < 2:
        raise CurveError(f"curve {dataset_id!r} needs at least 2 knots, got {len(knots)}")
    for a, b in zip(knots, knots[1:]):
        if a.flops == b.flops:
            raise CurveError(f"curve {dataset_id!r} has duplicate FLOPs value {a.flops}")
    return BaselineCurve(dataset_id=dataset_id, knots=tuple(knots))


def interpolate_flagged(curve: BaselineCurve, f: float) -> tuple[float, bool]:
    """Baseline performance at FLOPs f, plus whether the query clamped."""
    if not f > 0:
        raise CurveError(f"query FLOPs must be positive, got {f!r}")
    knots = curve.knots
    if f <= knots[0].flops:
        return knots[0].perf, f < knots[0].flops
    if f >= knots[-1].flops:
        return knots[-1].perf, f > knots[-1].flops
    for a, b in zip(knots, knots[1:]):
        if f <= b.flops:
            # exact at knots, so a curve scores precisely zero against itself
            if f == a.flops:
                return a.perf, False
            if f == b.flops:
                return b.perf, False
            w = (f - a.flops) / (b.flops - a.flops)
            return a.perf + w * (b.perf - a.perf), False
    raise AssertionError("unreachable")


def interpolate(curve: BaselineCurve, f: float) -> float:
    return interpolate_flagged(curve, f)[0]


def baseline_gap_score(points, curve: BaselineCurve) -> float:
    """Mean gap between the submission's points and the baseline at the same FLOPs."""
    score, _ = baseline_gap_score_flagged(points, curve)
    return score


def baseline_gap_score_flagged(points, curve: BaselineCurve) -> tuple[float, int]:
    points = list(points)
    if not points:
        raise EmptySubmissionError(f"no operating points for {curve.dataset_id!r}")
    total = 0.0
    clamped = 0
    for point in points:
        baseline, was_clamped = interpolate_flagged(curve, point.flops)
        total += point.perf - baseline
        clamped += was_clamped
    return total / len(points), clamped


def overall_score(per_dataset: dict[str, float],
                       required=DEFAULT_BENCHMARK_DATASETS) -> float | None:
    """Unweighted mean over the configured benchmark datasets; None when partial."""
    if any(ds not in per_dataset for ds in required):
        return None
    return sum(per_dataset[ds] for ds in required) / len(required)


def resolve_benchmark(available) -> tuple[str, ...]:
    """Benchmark set for a deployment: the standard six datasets where
    configured, otherwise everything the data directory provides."""
    standard = tuple(ds for ds in DEFAULT_BENCHMARK_DATASETS if ds in available)
    return standard or tuple(sorted(available))


def pareto_frontier(points) -> list[PerfPoint]:
    """Non-dominated subset, sorted by FLOPs.

    q dominates r iff q.flops <= r.flops and q.perf >= r.perf with at least
    one strict; exact (flops, perf) duplicates keep their first occurrence.
    """
    points = list(points)
    if not points:
        raise EmptySubmissionError("no points")
    first_seen: dict[tuple[float, float], int] = {}
    for i, p in enumerate(points):
        first_seen.setdefault((p.flops, p.perf), i)
    unique = [(points[i], i) for i in sorted(first_seen.values())]
    unique.sort(key=lambda pair: (pair[0].flops, -pair[0].perf, pair[1]))
    frontier: list[PerfPoint] = []
    best = float("-inf")
    for point, _ in unique:
        if point.perf > best:
            frontier.append(point)
            best = point.perf
    return frontier


def assign_track(params: int) -> str | None:
    """Smallest parameter track strictly above the count; None at or above the largest."""
    if params <= 0:
        raise ExitBenchError(f"params must be positive, got {params!r}")
    for track_id, threshold in TRACKS:
        if params < threshold:
            return track_id
    return None


# ---------------------------------------------------------------------------
# Whole-submission evaluation (shared by the CLI and the service)

@dataclass
class ScoredSubmission:
    dataset_scores: dict[str, float]
    points: dict[str, list[PerfPoint]]
    params: ParamCount
    track: str | None
    overall: float | None
    partial: bool
    avg_performance: float | None
    flags: dict = field(default_factory=dict)

    def as_report(self) -> dict:
        return {
            "convention_version": CONVENTION_VERSION,
            "params": {
                "backbone": self.params.backbone,
                "exit_heads": self.params.exit_heads,
                "with_exits": self.params.with_exits,
            },
            "track": self.track,
            "track_rank_metric": "mean over datasets of best per-dataset performance",
            "datasets": {
                ds: {
                    "score": self.dataset_scores[ds],
                    "points": [[p.flops, p.perf] for p in self.points[ds]],
                }
                for ds in sorted(self.dataset_scores)
            },
            "overall": self.overall,
            "partial": self.partial,
            "avg_performance": self.avg_performance,
            "flags": self.flags,
        }


class UnknownDatasetError(ExitBenchError):
    code = "unknown-dataset"


def evaluate_points(points_by_dataset: dict[str, list[PerfPoint]],
                    curves: dict[str, BaselineCurve],
                    params: ParamCount,
                    benchmark=DEFAULT_BENCHMARK_DATASETS) -> ScoredSubmission:
    scores: dict[str, float] = {}
    flags: dict = {"extrapolation_clamps": {}}
    for ds, points in points_by_dataset.items():
        if ds not in curves:
            raise UnknownDatasetError(f"no baseline curve for dataset {ds!r}")
        score, clamped = baseline_gap_score_flagged(points, curves[ds])
        scores[ds] = score
        if clamped:
            flags["extrapolation_clamps"][ds] = clamped
    overall = overall_score(scores, required=benchmark)
    partial = overall is None
    flags["partial"] = partial
    avg_perf = None
    if not partial:
        avg_perf = sum(max(p.perf for p in points_by_dataset[ds]) for ds in benchmark) / len(benchmark)
    return ScoredSubmission(
        dataset_scores=scores,
        points={ds: list(pts) for ds, pts in points_by_dataset.items()},
        params=params,
        track=assign_track(params.with_exits),
        overall=overall,
        partial=partial,
        avg_performance=avg_perf,
        flags=flags,
    )


def evaluate_bundle(spec: ModelSpec,
                    subs_by_dataset: dict[str, list[SubmissionFile]],
                    golds: dict[str, GoldFile],
                    curves: dict[str, BaselineCurve],
                    benchmark=DEFAULT_BENCHMARK_DATASETS) -> ScoredSubmission:
    """Cost, measure, and score a full trace-file bundle against gold labels."""
    points_by_dataset: dict[str, list[PerfPoint]] = {}
    for ds in sorted(subs_by_dataset):
        if ds not in golds:
            raise UnknownDatasetError(f"unknown dataset {ds!r}")
        gold = golds[ds]
        points: list[PerfPoint] = []
        for sub in subs_by_dataset[ds]:
            if len(sub.rows) != len(gold.labels):
                raise MetricError(
                    f"dataset {ds!r}: {len(sub.rows)} rows vs test-set size {len(gold.labels)}")
            preds = [row.pred for row in sub.rows]
            perf = dataset_metric(gold, preds)
            flops = submission_flops(sub, spec).mean
            points.append(PerfPoint(flops=flops, perf=perf))
        points_by_dataset[ds] = points
    return evaluate_points(points_by_dataset, curves, count_params(spec), benchmark=benchmark)


# ---------------------------------------------------------------------------
# Curve files

def curve_from_dict(obj: dict) -> BaselineCurve:
    if not isinstance(obj, dict) or "dataset_id" not in obj or "knots" not in obj:
        raise CurveError("curve file must be an object with dataset_id and knots")
    knots = []
    for pair in obj["knots"]:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise CurveError(f"bad knot {pair!r}")
        knots.append(PerfPoint(flops=float(pair[0]), perf=float(pair[1])))
    return build_baseline_curve(knots, obj["dataset_id"])


def curve_to_dict(curve: BaselineCurve) -> dict:
    return {
        "dataset_id": curve.dataset_id,
        "knots": [[p.flops, p.perf] for p in curve.knots],
    }


def read_curve_file(path: str | Path) -> BaselineCurve:
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UnreadableFileError(f"cannot read curve file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CurveError(f"curve file {path} is not valid JSON: {exc}") from exc
    return curve_from_dict(obj)
