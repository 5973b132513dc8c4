"""Submission and leaderboard HTTP service.

Submissions arrive as multipart bundles (a model spec, per-dataset trace
files, optional metadata) or as paper entries carrying pre-measured
(FLOPs, performance) points. The service canonicalizes the bundle,
derives its id as the sha256 of the canonical bytes, evaluates params /
FLOPs / metrics / scores synchronously with the same library code the CLI
uses, and persists the result.

Persistence is an append-only directory of canonical submission bytes plus
a derived ``index.json``; the index is rewritten atomically (write to a
temp file, then rename) and can always be rebuilt from the raw bytes, so a
crash can at worst lose the derived file. Writes are serialized through a
process-wide lock; reads are lock-free.

Endpoints::

    POST /api/submissions        multipart: spec, traces..., metadata | paper_entry
    GET  /api/submissions/{id}
    GET  /api/leaderboard?track=40M|55M|70M|110M
    GET  /api/datasets

Error bodies are ``{"error": {"code": ..., "message": ...}}``.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, File, UploadFile
from fastapi.responses import JSONResponse

from .costmodel import ParamCount, model_spec_from_dict, model_spec_to_dict
from .errors import ExitBenchError
from .metrics import GoldFile, read_gold_file
from .scoring import (
    TRACKS,
    BaselineCurve,
    PerfPoint,
    UnknownDatasetError,
    evaluate_bundle,
    evaluate_points,
    read_curve_file,
    resolve_benchmark,
)
from .trace import parse_trace_file, serialize_trace

SUBMISSION_SCHEMA = "exitbench-submission/1"
SELF_REPORT_MISMATCH_TOLERANCE = 0.01


class BadSubmission(ExitBenchError):
    code = "bad-submission"


class UnknownSubmission(ExitBenchError):
    code = "unknown-submission"


class UnknownTrack(ExitBenchError):
    code = "unknown-track"


@dataclass(frozen=True)
class DatasetConfig:
    gold: GoldFile
    curve: BaselineCurve


def load_data_dir(path: str | Path) -> dict[str, DatasetConfig]:
    """Read golds/<ds>.tsv and curves/<ds>.json pairs from a data directory."""
    root = Path(path)
    golds_dir = root / "golds"
    curves_dir = root / "curves"
    if not golds_dir.is_dir():
        raise ExitBenchError(f"data directory {root} has no golds/ subdirectory")
    datasets: dict[str, DatasetConfig] = {}
    for gold_path in sorted(golds_dir.glob("*.tsv")):
        gold = read_gold_file(gold_path)
        curve_path = curves_dir / f"{gold.dataset_id}.json"
        if not curve_path.exists():
            raise ExitBenchError(f"no baseline curve for dataset {gold.dataset_id!r}")
        datasets[gold.dataset_id] = DatasetConfig(gold=gold, curve=read_curve_file(curve_path))
    if not datasets:
        raise ExitBenchError(f"no gold files found under {golds_dir}")
    return datasets


def canonical_bytes(bundle: dict) -> bytes:
    return json.dumps(bundle, sort_keys=True, separators=(",", ":")).encode()


def bundle_id(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonicalize_bundle(bundle: dict) -> dict:
    """Validate structure and normalize trace texts to canonical form so the
    content hash ignores incidental whitespace."""
    if not isinstance(bundle, dict):
        raise BadSubmission("bundle must be a JSON object")
    kind = bundle.get("kind")
    if kind not in ("traces", "paper"):
        raise BadSubmission(f"bundle kind must be 'traces' or 'paper', got {kind!r}")
    out = {
        "schema": SUBMISSION_SCHEMA,
        "kind": kind,
        "submitter": str(bundle.get("submitter", "anonymous")),
        "model_name": str(bundle.get("model_name", "unnamed")),
    }
    if kind == "traces":
        if "spec" not in bundle:
            raise BadSubmission("bundle is missing the model spec")
        spec = model_spec_from_dict(bundle["spec"])
        traces = bundle.get("traces")
        if not isinstance(traces, dict) or not traces:
            raise BadSubmission("bundle needs at least one dataset trace file")
        canonical_traces: dict[str, list[dict]] = {}
        for ds in sorted(traces):
            entries = traces[ds]
            if not isinstance(entries, list) or not entries:
                raise BadSubmission(f"dataset {ds!r}: traces must be a non-empty list")
            canonical_entries = []
            for entry in entries:
                label = entry.get("label")
                sub = parse_trace_file(entry.get("text", ""), dataset_id=ds, label=label)
                canonical_entries.append({"label": label, "text": serialize_trace(sub)})
            canonical_traces[ds] = canonical_entries
        out["spec"] = model_spec_to_dict(spec)
        out["traces"] = canonical_traces
        if "self_reported" in bundle:
            out["self_reported"] = bundle["self_reported"]
    else:
        if "points" not in bundle or not isinstance(bundle["points"], dict) or not bundle["points"]:
            raise BadSubmission("paper entry needs per-dataset points")
        params = bundle.get("params")
        if not isinstance(params, int) or params < 1:
            raise BadSubmission("paper entry needs a positive integer params count")
        points = {}
        for ds in sorted(bundle["points"]):
            pairs = bundle["points"][ds]
            if not isinstance(pairs, list) or not pairs:
                raise BadSubmission(f"dataset {ds!r}: points must be a non-empty list")
            points[ds] = [[float(f), float(p)] for f, p in pairs]
        out["params"] = params
        out["points"] = points
    return out


class SubmissionStore:
    """Append-only store of canonical submission bundles with a derived index."""

    def __init__(self, root: str | Path, datasets: dict[str, DatasetConfig],
                 benchmark: tuple[str, ...] | None = None):
        self.root = Path(root)
        self.datasets = datasets
        self.benchmark = benchmark if benchmark is not None else resolve_benchmark(datasets)
        self.submissions_dir = self.root / "submissions"
        self.index_path = self.root / "index.json"
        self._lock = threading.Lock()
        self.submissions_dir.mkdir(parents=True, exist_ok=True)
        if self.index_path.exists():
            self._index = json.loads(self.index_path.read_text())
        else:
            self._index = {}
            self.rebuild_index()

    # -- evaluation ---------------------------------------------------------

    def _evaluate(self, bundle: dict) -> dict:
        golds = {ds: cfg.gold for ds, cfg in self.datasets.items()}
        curves = {ds: cfg.curve for ds, cfg in self.datasets.items()}
        if bundle["kind"] == "traces":
            spec = model_spec_from_dict(bundle["spec"])
            subs = {
                ds: [parse_trace_file(e["text"], dataset_id=ds, label=e.get("label"))
                     for e in entries]
                for ds, entries in bundle["traces"].items()
            }
            scored = evaluate_bundle(spec, subs, golds, curves, benchmark=self.benchmark)
            report = scored.as_report()
            report["source"] = "trace-verified"
            self._check_self_report(bundle, scored, report)
        else:
            points = {}
            for ds, pairs in bundle["points"].items():
                if ds not in self.datasets:
                    raise UnknownDatasetError(f"unknown dataset {ds!r}")
                points[ds] = [PerfPoint(flops=f, perf=p) for f, p in pairs]
            params = ParamCount(backbone=bundle["params"], exit_heads=0)
            scored = evaluate_points(points, curves, params, benchmark=self.benchmark)
            report = scored.as_report()
            report["source"] = "reported"
        return report

    @staticmethod
    def _check_self_report(bundle: dict, scored, report: dict) -> None:
        self_reported = bundle.get("self_reported") or {}
        mismatches = {}
        claimed_params = self_reported.get("params")
        if claimed_params is not None:
            measured = scored.params.with_exits
            if abs(claimed_params - measured) > SELF_REPORT_MISMATCH_TOLERANCE * measured:
                mismatches["params"] = {"claimed": claimed_params, "measured": measured}
        for ds, claimed in (self_reported.get("flops") or {}).items():
            if ds not in scored.points or not scored.points[ds]:
                continue
            measured = scored.points[ds][0].flops
            if abs(claimed - measured) > SELF_REPORT_MISMATCH_TOLERANCE * measured:
                mismatches[f"flops:{ds}"] = {"claimed": claimed, "measured": measured}
        if mismatches:
            report["flags"]["self_report_mismatch"] = mismatches

    # -- persistence --------------------------------------------------------

    def _write_index(self) -> None:
        tmp = self.index_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self._index, sort_keys=True, indent=1))
        os.replace(tmp, self.index_path)

    def _record_from_bytes(self, sid: str, data: bytes, received_at: str) -> dict:
        bundle = json.loads(data)
        report = self._evaluate(bundle)
        return {
            "id": sid,
            "submitter": bundle["submitter"],
            "model_name": bundle["model_name"],
            "kind": bundle["kind"],
            "received_at": received_at,
            "report": report,
        }

    def rebuild_index(self) -> None:
        index = {}
        for path in sorted(self.submissions_dir.glob("*.json")):
            if path.name.endswith(".meta.json"):
                continue
            sid = path.stem
            meta_path = self.submissions_dir / f"{sid}.meta.json"
            if meta_path.exists():
                received_at = json.loads(meta_path.read_text())["received_at"]
            else:
                received_at = datetime.fromtimestamp(
                    path.stat().st_mtime, tz=timezone.utc).isoformat()
            index[sid] = self._record_from_bytes(sid, path.read_bytes(), received_at)
        self._index = index
        self._write_index()

    def submit(self, raw_bundle: dict) -> dict:
        """Canonicalize, evaluate, persist; idempotent on identical content."""
        bundle = canonicalize_bundle(raw_bundle)
        data = canonical_bytes(bundle)
        sid = bundle_id(data)
        with self._lock:
            if sid in self._index:
                return self._index[sid]
            received_at = datetime.now(tz=timezone.utc).isoformat()
            record = self._record_from_bytes(sid, data, received_at)
            (self.submissions_dir / f"{sid}.json").write_bytes(data)
            (self.submissions_dir / f"{sid}.meta.json").write_text(
                json.dumps({"received_at": received_at}))
            self._index[sid] = record
            self._write_index()
            return record

    def get(self, sid: str) -> dict:
        with self._lock:
            try:
                return self._index[sid]
            except KeyError:
                raise UnknownSubmission(f"no submission {sid!r}") from None

    def canonical_submission_bytes(self, sid: str) -> bytes:
        path = self.submissions_dir / f"{sid}.json"
        if not path.exists():
            raise UnknownSubmission(f"no submission {sid!r}")
        return path.read_bytes()

    # -- boards -------------------------------------------------------------

    def leaderboard(self, track: str | None = None) -> list[dict]:
        with self._lock:
            records = list(self._index.values())
        if track is None:
            ranked = [r for r in records if r["report"]["overall"] is not None]
            ranked.sort(key=lambda r: (-r["report"]["overall"], r["received_at"], r["id"]))
            unranked = [r for r in records if r["report"]["overall"] is None]
        else:
            if track not in {t for t, _ in TRACKS}:
                raise UnknownTrack(f"unknown track {track!r}")
            records = [r for r in records if r["report"]["track"] == track]
            ranked = [r for r in records if r["report"]["avg_performance"] is not None]
            ranked.sort(key=lambda r: (-r["report"]["avg_performance"],
                                       r["received_at"], r["id"]))
            unranked = [r for r in records if r["report"]["avg_performance"] is None]
        unranked.sort(key=lambda r: (r["received_at"], r["id"]))

        entries = []
        for rank, record in enumerate(ranked, start=1):
            entries.append(self._board_entry(record, rank, track))
        for record in unranked:
            entries.append(self._board_entry(record, None, track))
        return entries

    @staticmethod
    def _board_entry(record: dict, rank: int | None, track: str | None) -> dict:
        report = record["report"]
        return {
            "rank": rank,
            "id": record["id"],
            "submitter": record["submitter"],
            "model_name": record["model_name"],
            "source": report["source"],
            "track": report["track"],
            "overall": report["overall"],
            "avg_performance": report["avg_performance"],
            "partial": report["partial"],
            "received_at": record["received_at"],
        }

    def datasets_info(self) -> list[dict]:
        out = []
        for ds in sorted(self.datasets):
            cfg = self.datasets[ds]
            out.append({
                "dataset_id": ds,
                "task_kind": cfg.gold.task_kind,
                "metric_kind": cfg.gold.metric_kind,
                "test_size": len(cfg.gold.labels),
                "curve_knots": len(cfg.curve.knots),
                "in_benchmark": ds in self.benchmark,
            })
        return out


# ---------------------------------------------------------------------------
# HTTP layer

def create_app(store: SubmissionStore) -> FastAPI:
    app = FastAPI(title="exitbench", version="0.1.0")

    def error_response(exc: ExitBenchError, status: int):
        return JSONResponse(
            status_code=status,
            content={"error": {"code": exc.code, "message": str(exc)}})

    @app.exception_handler(ExitBenchError)
    async def handle_engine_error(_request, exc: ExitBenchError):
        status = 404 if isinstance(exc, (UnknownSubmission, UnknownTrack)) else 400
        return error_response(exc, status)

    @app.post("/api/submissions")
    async def submit(
        spec: UploadFile | None = File(None),
        traces: list[UploadFile] = File(default=[]),
        metadata: UploadFile | None = File(None),
        paper_entry: UploadFile | None = File(None),
    ):
        if paper_entry is not None:
            try:
                bundle = json.loads(await paper_entry.read())
            except json.JSONDecodeError as exc:
                raise BadSubmission(f"paper entry is not valid JSON: {exc}") from exc
            bundle["kind"] = "paper"
            return store.submit(bundle)

        meta = {}
        if metadata is not None:
            try:
                meta = json.loads(await metadata.read())
            except json.JSONDecodeError as exc:
                raise BadSubmission(f"metadata is not valid JSON: {exc}") from exc
        if spec is None:
            raise BadSubmission("bundle is missing the model spec file")
        try:
            spec_obj = json.loads(await spec.read())
        except json.JSONDecodeError as exc:
            raise BadSubmission(f"model spec is not valid JSON: {exc}") from exc

        trace_map: dict[str, list[dict]] = {}
        for upload in traces:
            name = Path(upload.filename or "").stem
            if not name:
                raise BadSubmission("trace files need '<dataset>[@label].tsv' filenames")
            ds, _, label = name.partition("@")
            text = (await upload.read()).decode()
            trace_map.setdefault(ds, []).append({"label": label or None, "text": text})
        bundle = {
            "kind": "traces",
            "submitter": meta.get("submitter", "anonymous"),
            "model_name": meta.get("model_name", "unnamed"),
            "spec": spec_obj,
            "traces": trace_map,
        }
        if "self_reported" in meta:
            bundle["self_reported"] = meta["self_reported"]
        return store.submit(bundle)

    @app.get("/api/submissions/{sid}")
    async def get_submission(sid: str):
        return store.get(sid)

    @app.get("/api/leaderboard")
    async def leaderboard(track: str | None = None):
        return {"track": track, "entries": store.leaderboard(track)}

    @app.get("/api/datasets")
    async def datasets():
        return {"datasets": store.datasets_info()}

    return app
