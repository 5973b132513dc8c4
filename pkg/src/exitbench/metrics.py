"""Per-dataset performance metrics over predictions and gold labels.

Gold files are tab-separated ``<index>\\t<label>`` rows preceded by a
one-line typed header::

    dataset_id=sst2\ttask_kind=classification\tmetric_kind=Accuracy

Metric kinds: ``Accuracy`` (plain accuracy), ``AccF1Mean`` (unweighted mean
of accuracy and binary F1, for class-imbalanced paraphrase data), and
``PearsonSpearmanMean`` (mean of the two correlation coefficients, for
regression similarity data). All dataset-level numbers are reported on a
0-100 scale and are never rounded internally.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GoldFileError, MetricError, UndefinedCorrelationError, UnreadableFileError

CLASSIFICATION = "classification"
REGRESSION = "regression"

ACCURACY = "Accuracy"
ACC_F1_MEAN = "AccF1Mean"
PEARSON_SPEARMAN_MEAN = "PearsonSpearmanMean"

METRIC_KINDS = (ACCURACY, ACC_F1_MEAN, PEARSON_SPEARMAN_MEAN)


@dataclass(frozen=True)
class GoldFile:
    dataset_id: str
    task_kind: str
    metric_kind: str
    labels: tuple[int | float, ...]

    def __post_init__(self):
        if self.task_kind not in (CLASSIFICATION, REGRESSION):
            raise GoldFileError(f"unknown task_kind {self.task_kind!r}")
        if self.metric_kind not in METRIC_KINDS:
            raise GoldFileError(f"unknown metric_kind {self.metric_kind!r}")
        regression_metric = self.metric_kind == PEARSON_SPEARMAN_MEAN
        if regression_metric != (self.task_kind == REGRESSION):
            raise GoldFileError(
                f"metric_kind {self.metric_kind} inconsistent with task_kind {self.task_kind}")
        if not self.labels:
            raise GoldFileError("gold file has no labels")
        if self.task_kind == CLASSIFICATION and any(
                not isinstance(x, int) or x < 0 for x in self.labels):
            raise GoldFileError("classification labels must be non-negative integers")


def _check_lengths(preds, golds):
    if len(preds) != len(golds):
        raise MetricError(f"length mismatch: {len(preds)} predictions vs {len(golds)} golds")
    if len(preds) == 0:
        raise MetricError("empty inputs")


def accuracy(preds, golds) -> float:
    _check_lengths(preds, golds)
    matches = sum(1 for p, g in zip(preds, golds) if p == g)
    return matches / len(golds)


def f1_binary(preds, golds) -> float:
    """F1 with positive class 1; zero by convention when precision + recall is zero."""
    _check_lengths(preds, golds)
    for value in list(preds) + list(golds):
        if value not in (0, 1):
            raise MetricError(f"non-binary label {value!r}")
    tp = sum(1 for p, g in zip(preds, golds) if p == 1 and g == 1)
    fp = sum(1 for p, g in zip(preds, golds) if p == 1 and g == 0)
    fn = sum(1 for p, g in zip(preds, golds) if p == 0 and g == 1)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def pearson(x, y) -> float:
    _check_lengths(x, y)
    if len(x) < 2:
        raise MetricError("correlation needs at least 2 points")
    ax = np.asarray(x, dtype=np.float64)
    ay = np.asarray(y, dtype=np.float64)
    dx = ax - ax.mean()
    dy = ay - ay.mean()
    sx = float(np.sqrt((dx * dx).sum()))
    sy = float(np.sqrt((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError("zero variance input")
    return float((dx * dy).sum() / (sx * sy))


def rank_average_ties(values) -> list[float]:
    """Fractional ranks starting at 1, ties receiving the mean of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean_rank = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = mean_rank
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    _check_lengths(x, y)
    try:
        return pearson(rank_average_ties(x), rank_average_ties(y))
    except UndefinedCorrelationError:
        raise UndefinedCorrelationError("zero rank variance") from None


def dataset_metric(gold: GoldFile, preds) -> float:
    """Dataset performance on the 0-100 scale per the gold file's metric kind."""
    _check_lengths(preds, gold.labels)
    if gold.metric_kind == ACCURACY:
        return 100.0 * accuracy(preds, gold.labels)
    if gold.metric_kind == ACC_F1_MEAN:
        acc = accuracy(preds, gold.labels)
        f1 = f1_binary(preds, gold.labels)
        return 100.0 * (acc + f1) / 2
    assert gold.metric_kind == PEARSON_SPEARMAN_MEAN
    r = pearson(preds, gold.labels)
    rho = spearman(preds, gold.labels)
    return 100.0 * (r + rho) / 2


# ---------------------------------------------------------------------------
# Gold files

def parse_gold_file(text: str) -> GoldFile:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise GoldFileError("empty gold file")
    header: dict[str, str] = {}
    for part in lines[0].split("\t"):
        part = part.strip()
        if "=" not in part:
            raise GoldFileError(f"bad header field {part!r}")
        key, value = part.split("=", 1)
        header[key.strip()] = value.strip()
    missing = {"dataset_id", "task_kind", "metric_kind"} - set(header)
    if missing:
        raise GoldFileError(f"header missing {sorted(missing)}")

    task_kind = header["task_kind"]
    labels: list[int | float] = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = [p.strip() for p in line.split("\t")]
        if len(parts) != 2:
            raise GoldFileError(f"line {lineno}: expected index\\tlabel")
        if not parts[0].isdigit() or int(parts[0]) != lineno - 2:
            raise GoldFileError(f"line {lineno}: indices must run 0..N-1 in order")
        try:
            labels.append(int(parts[1]) if task_kind == CLASSIFICATION else float(parts[1]))
        except ValueError:
            raise GoldFileError(f"line {lineno}: bad label {parts[1]!r}") from None
    return GoldFile(
        dataset_id=header["dataset_id"], task_kind=task_kind,
        metric_kind=header["metric_kind"], labels=tuple(labels))


def serialize_gold_file(gold: GoldFile) -> str:
    lines = [
        f"dataset_id={gold.dataset_id}\ttask_kind={gold.task_kind}\tmetric_kind={gold.metric_kind}"
    ]
    for i, label in enumerate(gold.labels):
        text = str(label) if isinstance(label, int) else f"{label:.6f}"
        lines.append(f"{i}\t{text}")
    return "\n".join(lines) + "\n"


def read_gold_file(path: str | Path) -> GoldFile:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read gold file {path}: {exc}") from exc
    return parse_gold_file(text)
