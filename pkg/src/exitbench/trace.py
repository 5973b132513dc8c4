"""Per-sample module-trace submission files.

Wire format (bit-exact): a header line ``index\\tpred\\tmodules``, then one
tab-separated row per test sample. The modules column lists the executed
modules in order as ``(<dims>),<module_id>`` entries separated by ``;``,
where the parenthesized dims are the module's input shape, e.g.::

    index\tpred\tmodules
    0\t1\t(10),emb; (10,768),layer_1; (768),exit_1

Canonical serialization uses a single space after each ``;``, no trailing
separator, ``\\n`` line endings, and fixed numeric formatting (integers for
class predictions, 6 fractional digits for regression values), so submission
bytes hash stably. Parsing tolerates extra whitespace around separators;
``parse ∘ serialize`` is the identity on valid files and
``serialize ∘ parse`` canonicalizes any accepted file.

Token-pruning submissions, where the leading shape dim shrinks as layers
drop tokens, are ordinary rows here; nothing requires shapes to repeat.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .costmodel import ModelSpec, module_flops
from .errors import (
    EmptySubmissionError,
    ShapeError,
    TraceParseError,
    UnknownModuleError,
    UnreadableFileError,
)

HEADER = "index\tpred\tmodules"

Step = tuple[tuple[int, ...], str]

_STEP_RE = re.compile(r"\s*\(\s*(\d+)\s*(?:,\s*(\d+)\s*)?\)\s*,\s*([^\s;,()]+)\s*$")
_INT_RE = re.compile(r"[+-]?\d+$")


@dataclass(frozen=True)
class SampleTrace:
    """One test sample: its prediction and the ordered module invocations."""

    index: int
    pred: int | float
    steps: tuple[Step, ...]


@dataclass
class SubmissionFile:
    """All rows of one predicted test file for a dataset.

    ``dataset_id`` and the optional operating-point ``label`` are carried
    alongside the rows; they are not part of the serialized table.
    """

    dataset_id: str
    rows: list[SampleTrace] = field(default_factory=list)
    label: str | None = None


def validate_submission(sub: SubmissionFile) -> None:
    for pos, row in enumerate(sub.rows):
        if row.index != pos:
            raise TraceParseError(
                f"row indices must be contiguous from 0; expected {pos}, got {row.index}")
        if not row.steps:
            raise TraceParseError(f"row {row.index}: empty modules list")
        for shape, module_id in row.steps:
            if len(shape) not in (1, 2):
                raise TraceParseError(f"row {row.index}: shape arity must be 1 or 2, got {shape}")
            if any(not isinstance(x, int) or x < 1 for x in shape):
                raise TraceParseError(f"row {row.index}: shape dims must be positive, got {shape}")
            if not module_id:
                raise TraceParseError(f"row {row.index}: empty module id")


def _parse_pred(text: str, lineno: int) -> int | float:
    if _INT_RE.fullmatch(text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        raise TraceParseError(f"bad prediction {text!r}", line=lineno, column=2) from None


def _parse_steps(modules_field: str, lineno: int, field_offset: int) -> tuple[Step, ...]:
    if not modules_field.strip():
        raise TraceParseError("empty modules column", line=lineno, column=field_offset + 1)
    steps: list[Step] = []
    offset = 0
    for entry in modules_field.split(";"):
        column = field_offset + offset + 1
        match = _STEP_RE.fullmatch(entry)
        if match is None:
            raise TraceParseError(
                f"malformed module entry {entry.strip()!r}", line=lineno, column=column)
        d1, d2, module_id = match.group(1), match.group(2), match.group(3)
        shape = (int(d1),) if d2 is None else (int(d1), int(d2))
        if any(x < 1 for x in shape):
            raise TraceParseError(
                f"shape dims must be positive, got {shape}", line=lineno, column=column)
        steps.append((shape, module_id))
        offset += len(entry) + 1
    return tuple(steps)


def parse_trace_file(text: str, dataset_id: str = "", label: str | None = None) -> SubmissionFile:
    """Parse a submission file; raises :class:`TraceParseError` with line and
    column on malformed input."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TraceParseError("empty file", line=1)
    header_fields = [f.strip() for f in lines[0].split("\t")]
    if header_fields != HEADER.split("\t"):
        raise TraceParseError(f"unknown header {lines[0]!r}", line=1, column=1)

    rows: list[SampleTrace] = []
    seen: set[int] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            raise TraceParseError("blank line", line=lineno, column=1)
        parts = line.split("\t")
        if len(parts) != 3:
            raise TraceParseError(
                f"expected 3 tab-separated fields, got {len(parts)}", line=lineno, column=1)
        index_text = parts[0].strip()
        if not index_text.isdigit():
            raise TraceParseError(f"bad index {parts[0]!r}", line=lineno, column=1)
        index = int(index_text)
        if index in seen:
            raise TraceParseError(f"duplicate index {index}", line=lineno, column=1)
        seen.add(index)
        pred = _parse_pred(parts[1].strip(), lineno)
        field_offset = len(parts[0]) + 1 + len(parts[1]) + 1
        steps = _parse_steps(parts[2], lineno, field_offset)
        rows.append(SampleTrace(index=index, pred=pred, steps=steps))

    if seen != set(range(len(rows))):
        raise TraceParseError(
            f"indices must be contiguous from 0, got {sorted(seen)[:5]}...")
    for pos, row in enumerate(rows):
        if row.index != pos:
            raise TraceParseError(f"rows out of index order at index {row.index}")
    sub = SubmissionFile(dataset_id=dataset_id, rows=rows, label=label)
    validate_submission(sub)
    return sub


def _format_pred(pred: int | float) -> str:
    if isinstance(pred, bool):
        raise TraceParseError(f"bad prediction type {pred!r}")
    if isinstance(pred, int):
        return str(pred)
    return f"{pred:.6f}"


def serialize_trace(sub: SubmissionFile) -> str:
    """Canonical byte-stable text form of a valid submission."""
    validate_submission(sub)
    lines = [HEADER]
    for row in sub.rows:
        modules = "; ".join(
            f"({','.join(str(x) for x in shape)}),{module_id}" for shape, module_id in row.steps)
        lines.append(f"{row.index}\t{_format_pred(row.pred)}\t{modules}")
    return "\n".join(lines) + "\n"


def trace_flops(row: SampleTrace, spec: ModelSpec) -> int:
    """Total FLOPs of one sample: the sum of its module invocations, in order."""
    total = 0
    for shape, module_id in row.steps:
        try:
            decl = spec.module(module_id)
            total += module_flops(decl, shape, spec)
        except UnknownModuleError:
            raise UnknownModuleError(module_id, context=f"trace row {row.index}") from None
        except ShapeError as exc:
            raise ShapeError(f"trace row {row.index}: {exc}") from None
    return total


@dataclass(frozen=True)
class FlopsSummary:
    mean: float
    min: int
    max: int
    p50: float
    p90: float
    p99: float
    count: int

    def as_dict(self) -> dict:
        return {
            "mean": self.mean, "min": self.min, "max": self.max,
            "p50": self.p50, "p90": self.p90, "p99": self.p99, "count": self.count,
        }


def submission_flops(sub: SubmissionFile, spec: ModelSpec) -> FlopsSummary:
    """Arithmetic mean of per-row FLOPs plus a min/max/percentile summary."""
    if not sub.rows:
        raise EmptySubmissionError(f"submission {sub.dataset_id!r} has no rows")
    per_row = [trace_flops(row, spec) for row in sub.rows]
    arr = np.asarray(per_row, dtype=np.float64)
    p50, p90, p99 = (float(np.percentile(arr, q)) for q in (50, 90, 99))
    return FlopsSummary(
        mean=float(arr.mean()),
        min=int(min(per_row)),
        max=int(max(per_row)),
        p50=p50,
        p90=p90,
        p99=p99,
        count=len(per_row),
    )


def read_trace_file(path, dataset_id: str = "", label: str | None = None) -> SubmissionFile:
    from pathlib import Path

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read trace file {path}: {exc}") from exc
    return parse_trace_file(text, dataset_id=dataset_id, label=label)
