"""Early-exit policy simulation over per-exit model outputs.

Two families of rules decide where a sample leaves the network:

* entropy: softmax each internal classifier's logits in order and exit at
  the first layer whose prediction entropy falls strictly below the
  threshold. Strict inequality makes threshold 0 mean "never exit early",
  a clean sweep endpoint. Entropy rules apply to classification only.
* patience: exit once consecutive exits agree (argmax for classification,
  absolute difference within ``tau`` for regression values) ``t`` times in
  a row; the counter resets to zero on disagreement.

If no rule fires the sample exits at the top layer. A sweep applies a grid
of policies to a whole dataset, synthesizes one trace file per grid cell
(embedding, layers 1..exit, and the exit head at the chosen layer), and
re-costs those traces to obtain performance-FLOPs points.

Per-exit outputs travel in a line-delimited file ("exitbench-logits/1"): a
meta record, then one record per sample holding either an L x C logits
array or L regression values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .costmodel import ModelSpec, resolved_dim
from .errors import (
    ExitBenchError,
    InvalidDistribution,
    LogitsFileError,
    PolicyMismatchError,
    UnreadableFileError,
)
from .metrics import CLASSIFICATION, REGRESSION, GoldFile, dataset_metric
from .scoring import PerfPoint
from .trace import SampleTrace, SubmissionFile, submission_flops

LOGITS_SCHEMA = "exitbench-logits/1"


@dataclass(frozen=True)
class ExitOutputs:
    """One sample's outputs at every exit, bottom to top."""

    index: int
    per_exit: tuple

    @property
    def num_exits(self) -> int:
        return len(self.per_exit)

    @property
    def is_regression(self) -> bool:
        return not isinstance(self.per_exit[0], tuple)


@dataclass
class OutputsSet:
    """A dataset's worth of per-exit outputs plus their shape contract."""

    task_kind: str
    num_exits: int
    num_labels: int | None
    samples: list[ExitOutputs]

    def __post_init__(self):
        if self.task_kind == CLASSIFICATION and not self.num_labels:
            raise LogitsFileError("classification outputs need num_labels")
        for pos, sample in enumerate(self.samples):
            if sample.index != pos:
                raise LogitsFileError(f"sample indices must run 0..N-1, got {sample.index} at {pos}")
            if sample.num_exits != self.num_exits:
                raise LogitsFileError(
                    f"sample {sample.index}: {sample.num_exits} exits, expected {self.num_exits}")
            if self.task_kind == CLASSIFICATION:
                for exit_values in sample.per_exit:
                    if not isinstance(exit_values, tuple) or len(exit_values) != self.num_labels:
                        raise LogitsFileError(
                            f"sample {sample.index}: logits width must be {self.num_labels}")
            else:
                if any(isinstance(v, tuple) for v in sample.per_exit):
                    raise LogitsFileError(f"sample {sample.index}: regression outputs must be scalars")


@dataclass(frozen=True)
class EntropyPolicy:
    threshold: float  # nats

    def __post_init__(self):
        if not self.threshold >= 0:
            raise ExitBenchError(f"entropy threshold must be >= 0, got {self.threshold!r}")

    def describe(self) -> str:
        return f"entropy={self.threshold:.6f}"


@dataclass(frozen=True)
class PatiencePolicy:
    patience: int

    def __post_init__(self):
        if not isinstance(self.patience, int) or self.patience < 1:
            raise ExitBenchError(f"patience must be a positive integer, got {self.patience!r}")

    def describe(self) -> str:
        return f"patience={self.patience}"


@dataclass(frozen=True)
class RegressionPatiencePolicy:
    patience: int
    tau: float = 0.1  # absolute tolerance on the label scale

    def __post_init__(self):
        if not isinstance(self.patience, int) or self.patience < 1:
            raise ExitBenchError(f"patience must be a positive integer, got {self.patience!r}")
        if not self.tau >= 0:
            raise ExitBenchError(f"tau must be >= 0, got {self.tau!r}")

    def describe(self) -> str:
        return f"patience={self.patience},tau={self.tau:.6f}"


ExitPolicy = EntropyPolicy | PatiencePolicy | RegressionPatiencePolicy


def softmax(logits) -> list[float]:
    arr = np.asarray(logits, dtype=np.float64)
    arr = arr - arr.max()
    exps = np.exp(arr)
    return list(exps / exps.sum())


def entropy(probs) -> float:
    """Shannon entropy in nats; 0 * ln 0 counts as 0."""
    arr = np.asarray(list(probs), dtype=np.float64)
    if arr.size == 0 or (arr < 0).any():
        raise InvalidDistribution(f"not a distribution: {list(probs)!r}")
    if abs(float(arr.sum()) - 1.0) > 1e-9:
        raise InvalidDistribution(f"probabilities sum to {float(arr.sum())!r}, not 1")
    nonzero = arr[arr > 0]
    return float(-(nonzero * np.log(nonzero)).sum())


def _require_classification(outputs: ExitOutputs, policy_name: str):
    if outputs.is_regression:
        raise PolicyMismatchError(
            f"{policy_name} policies require classification outputs; "
            f"sample {outputs.index} carries regression values")


def entropy_exit(outputs: ExitOutputs, threshold: float) -> tuple[int, int]:
    """First exit whose softmax entropy is strictly below the threshold; top layer otherwise."""
    _require_classification(outputs, "entropy")
    top = outputs.num_exits
    for layer, logits in enumerate(outputs.per_exit, start=1):
        if layer == top:
            break
        if entropy(softmax(logits)) < threshold:
            return layer, int(np.argmax(logits))
    return top, int(np.argmax(outputs.per_exit[-1]))


def patience_exit(outputs: ExitOutputs, t: int) -> tuple[int, int]:
    """Exit once t consecutive exits agree on the argmax; counter resets on change."""
    _require_classification(outputs, "patience")
    if t < 1:
        raise ExitBenchError(f"patience must be >= 1, got {t}")
    argmaxes = [int(np.argmax(logits)) for logits in outputs.per_exit]
    counter = 0
    for layer in range(2, outputs.num_exits + 1):
        counter = counter + 1 if argmaxes[layer - 1] == argmaxes[layer - 2] else 0
        if counter == t:
            return layer, argmaxes[layer - 1]
    return outputs.num_exits, argmaxes[-1]


def patience_exit_regression(outputs: ExitOutputs, t: int, tau: float) -> tuple[int, float]:
    """Regression analog: agreement means successive values within tau."""
    if not outputs.is_regression:
        raise PolicyMismatchError(
            f"regression patience requires scalar outputs; sample {outputs.index} has logits")
    if t < 1:
        raise ExitBenchError(f"patience must be >= 1, got {t}")
    values = [float(v) for v in outputs.per_exit]
    counter = 0
    for layer in range(2, outputs.num_exits + 1):
        counter = counter + 1 if abs(values[layer - 1] - values[layer - 2]) <= tau else 0
        if counter == t:
            return layer, values[layer - 1]
    return outputs.num_exits, values[-1]


def apply_policy(policy: ExitPolicy, outputs: ExitOutputs) -> tuple[int, int | float]:
    if isinstance(policy, EntropyPolicy):
        return entropy_exit(outputs, policy.threshold)
    if isinstance(policy, PatiencePolicy):
        return patience_exit(outputs, policy.patience)
    return patience_exit_regression(outputs, policy.patience, policy.tau)


@dataclass
class SweepCell:
    policy: ExitPolicy
    point: PerfPoint
    submission: SubmissionFile
    mean_exit_layer: float


def synthesize_trace(index: int, pred, exit_layer: int, seq_len: int, spec: ModelSpec) -> SampleTrace:
    """Trace for one sample exiting at the given layer: embedding, layers
    1..exit_layer, and that layer's exit head."""
    steps = [((seq_len,), spec.embedding_id)]
    for k in range(1, exit_layer + 1):
        layer = spec.module(f"layer_{k}")
        steps.append(((seq_len, resolved_dim(layer, spec, "hidden_size")), layer.id))
    head = spec.module(f"exit_{exit_layer}")
    steps.append(((resolved_dim(head, spec, "hidden_size"),), head.id))
    return SampleTrace(index=index, pred=pred, steps=tuple(steps))


def sweep_policy(dataset_outputs: OutputsSet, spec: ModelSpec, seq_lens,
                 policy_grid, gold: GoldFile, dataset_id: str | None = None) -> list[SweepCell]:
    """Run every policy in the grid over the dataset, synthesizing one
    submission file and one performance-FLOPs point per policy."""
    samples = dataset_outputs.samples
    if len(seq_lens) != len(samples):
        raise ExitBenchError(
            f"{len(seq_lens)} sequence lengths for {len(samples)} samples")
    if len(gold.labels) != len(samples):
        raise ExitBenchError(
            f"{len(gold.labels)} gold labels for {len(samples)} samples")
    if dataset_outputs.num_exits != spec.num_layers:
        raise ExitBenchError(
            f"outputs carry {dataset_outputs.num_exits} exits but spec has {spec.num_layers} layers")
    expected_kind = REGRESSION if dataset_outputs.task_kind == REGRESSION else CLASSIFICATION
    if gold.task_kind != expected_kind:
        raise PolicyMismatchError(
            f"gold task_kind {gold.task_kind!r} does not match outputs {dataset_outputs.task_kind!r}")

    ds = dataset_id if dataset_id is not None else gold.dataset_id
    cells: list[SweepCell] = []
    for policy in policy_grid:
        rows: list[SampleTrace] = []
        exit_layers: list[int] = []
        for sample, n in zip(samples, seq_lens):
            exit_layer, pred = apply_policy(policy, sample)
            if isinstance(pred, float):
                # score what the trace file will actually carry (6-digit wire form)
                pred = float(f"{pred:.6f}")
            exit_layers.append(exit_layer)
            rows.append(synthesize_trace(sample.index, pred, exit_layer, n, spec))
        rows.sort(key=lambda r: r.index)
        sub = SubmissionFile(dataset_id=ds, rows=rows, label=policy.describe())
        preds = [row.pred for row in rows]
        point = PerfPoint(flops=submission_flops(sub, spec).mean,
                          perf=dataset_metric(gold, preds))
        cells.append(SweepCell(policy=policy, point=point, submission=sub,
                               mean_exit_layer=sum(exit_layers) / len(exit_layers)))
    return cells


# ---------------------------------------------------------------------------
# Logits files

def write_logits_text(outputs: OutputsSet) -> str:
    meta = {
        "schema": LOGITS_SCHEMA,
        "task_kind": outputs.task_kind,
        "num_exits": outputs.num_exits,
        "num_labels": outputs.num_labels,
    }
    lines = [json.dumps(meta, sort_keys=True)]
    for sample in outputs.samples:
        if outputs.task_kind == CLASSIFICATION:
            record = {"index": sample.index, "logits": [list(row) for row in sample.per_exit]}
        else:
            record = {"index": sample.index, "values": list(sample.per_exit)}
        lines.append(json.dumps(record, sort_keys=True))
    return "\n".join(lines) + "\n"


def parse_logits_text(text: str) -> OutputsSet:
    lines = [line for line in text.split("\n") if line.strip()]
    if not lines:
        raise LogitsFileError("empty logits file")
    try:
        meta = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise LogitsFileError(f"bad meta line: {exc}") from exc
    if not isinstance(meta, dict) or meta.get("schema") != LOGITS_SCHEMA:
        raise LogitsFileError(f"unsupported schema {meta!r}")
    task_kind = meta.get("task_kind")
    if task_kind not in (CLASSIFICATION, REGRESSION):
        raise LogitsFileError(f"bad task_kind {task_kind!r}")
    samples: list[ExitOutputs] = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogitsFileError(f"line {lineno}: {exc}") from exc
        if task_kind == CLASSIFICATION:
            if "logits" not in record:
                raise LogitsFileError(f"line {lineno}: missing logits")
            per_exit = tuple(tuple(float(v) for v in row) for row in record["logits"])
        else:
            if "values" not in record:
                raise LogitsFileError(f"line {lineno}: missing values")
            per_exit = tuple(float(v) for v in record["values"])
        samples.append(ExitOutputs(index=int(record["index"]), per_exit=per_exit))
    return OutputsSet(
        task_kind=task_kind,
        num_exits=int(meta["num_exits"]),
        num_labels=None if meta.get("num_labels") is None else int(meta["num_labels"]),
        samples=samples,
    )


def read_logits_file(path: str | Path) -> OutputsSet:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read logits file {path}: {exc}") from exc
    return parse_logits_text(text)


def ln_num_classes(num_labels: int) -> float:
    """Upper bound of the entropy range for a C-way distribution."""
    return math.log(num_labels)
