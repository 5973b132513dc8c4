"""Command-line entry point.

Subcommands: flops, params, score, frontier, simulate, train, leaderboard,
serve. ``--format json`` emits byte-stable machine-readable output (sorted
keys, no timestamps); the default human format prints small tables. Errors
print a machine-readable ``{"error": {"code", "message"}}`` line on stderr
and exit nonzero, with the exit status keyed to the error category.

The gold/curve data directory for ``score`` and ``serve`` defaults to the
``EXITBENCH_DATA_DIR`` environment variable; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .costmodel import CONVENTION_VERSION, count_params, load_model_spec
from .errors import (
    CurveError,
    EmptySubmissionError,
    ExitBenchError,
    GoldFileError,
    LogitsFileError,
    ShapeError,
    SpecValidationError,
    TraceParseError,
    UnreadableFileError,
)
from .exitsim import (
    EntropyPolicy,
    PatiencePolicy,
    RegressionPatiencePolicy,
    read_logits_file,
    sweep_policy,
    write_logits_text,
)
from .metrics import REGRESSION, GoldFile, read_gold_file, serialize_gold_file
from .scoring import (
    PerfPoint,
    assign_track,
    evaluate_bundle,
    pareto_frontier,
    resolve_benchmark,
)
from .service import SubmissionStore, load_data_dir
from .trace import read_trace_file, serialize_trace, submission_flops
from .trainer import exit_accuracies, export_logits, load_train_config, run_config

# process exit status per error category; the JSON body carries the precise code
_EXIT_STATUS = {
    UnreadableFileError: 3,
    SpecValidationError: 3,
    TraceParseError: 4,
    GoldFileError: 4,
    CurveError: 4,
    LogitsFileError: 4,
    ShapeError: 4,
    EmptySubmissionError: 5,
}


def _dump(obj, args) -> None:
    if getattr(args, "format", "human") == "json":
        print(json.dumps(obj, sort_keys=True, indent=1))
    else:
        _print_human(obj)


def _print_human(obj, indent: str = "") -> None:
    if isinstance(obj, dict):
        for key in obj:
            value = obj[key]
            if isinstance(value, (dict, list)):
                print(f"{indent}{key}:")
                _print_human(value, indent + "  ")
            else:
                if isinstance(value, float):
                    value = f"{value:.2f}"
                print(f"{indent}{key}: {value}")
    elif isinstance(obj, list):
        for value in obj:
            if isinstance(value, (dict, list)):
                _print_human(value, indent + "  ")
                print()
            else:
                print(f"{indent}{value}")
    else:
        print(f"{indent}{obj}")


def _data_dir(args) -> Path:
    if getattr(args, "data_dir", None):
        return Path(args.data_dir)
    env = os.environ.get("EXITBENCH_DATA_DIR")
    if env:
        return Path(env)
    raise ExitBenchError("no data directory: pass --data-dir or set EXITBENCH_DATA_DIR")


# ---------------------------------------------------------------------------
# subcommands

def cmd_flops(args) -> None:
    spec = load_model_spec(args.spec)
    report = {"convention_version": CONVENTION_VERSION, "files": {}}
    for path in args.traces:
        sub = read_trace_file(path)
        report["files"][str(path)] = submission_flops(sub, spec).as_dict()
    _dump(report, args)


def cmd_params(args) -> None:
    spec = load_model_spec(args.spec)
    counts = count_params(spec)
    _dump({
        "convention_version": CONVENTION_VERSION,
        "model_name": spec.model_name,
        "backbone": counts.backbone,
        "exit_heads": counts.exit_heads,
        "with_exits": counts.with_exits,
        "track": assign_track(counts.with_exits),
    }, args)


def _parse_trace_args(pairs):
    subs: dict[str, list] = {}
    for item in pairs:
        dataset, sep, path = item.partition("=")
        if not sep or not dataset or not path:
            raise ExitBenchError(f"--trace expects DATASET=PATH, got {item!r}")
        subs.setdefault(dataset, []).append(path)
    return subs


def cmd_score(args) -> None:
    spec = load_model_spec(args.spec)
    datasets = load_data_dir(_data_dir(args))
    subs = {
        ds: [read_trace_file(path, dataset_id=ds) for path in paths]
        for ds, paths in _parse_trace_args(args.trace).items()
    }
    golds = {ds: cfg.gold for ds, cfg in datasets.items()}
    curves = {ds: cfg.curve for ds, cfg in datasets.items()}
    scored = evaluate_bundle(spec, subs, golds, curves,
                             benchmark=resolve_benchmark(datasets))
    _dump(scored.as_report(), args)


def cmd_frontier(args) -> None:
    try:
        pairs = json.loads(Path(args.points).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ExitBenchError(f"cannot read points file {args.points}: {exc}") from exc
    points = [PerfPoint(flops=float(f), perf=float(p)) for f, p in pairs]
    frontier = pareto_frontier(points)
    if args.format == "json":
        _dump({"frontier": [[p.flops, p.perf] for p in frontier]}, args)
    else:
        for p in frontier:
            print(f"{p.flops}\t{p.perf}")


def _policy_grid(args, regression: bool):
    grid = []
    for raw in (args.entropy or "").split(","):
        if raw.strip():
            grid.append(EntropyPolicy(float(raw)))
    for raw in (args.patience or "").split(","):
        if raw.strip():
            t = int(raw)
            grid.append(RegressionPatiencePolicy(t, tau=args.tau) if regression
                        else PatiencePolicy(t))
    if not grid:
        raise ExitBenchError("empty policy grid: pass --entropy and/or --patience")
    return grid


def cmd_simulate(args) -> None:
    spec = load_model_spec(args.spec)
    outputs = read_logits_file(args.logits)
    gold = read_gold_file(args.gold)
    if args.seq_lens:
        seq_lens = [int(line) for line in Path(args.seq_lens).read_text().split()]
    else:
        seq_lens = [args.seq_len] * len(outputs.samples)
    grid = _policy_grid(args, regression=outputs.task_kind == REGRESSION)
    cells = sweep_policy(outputs, spec, seq_lens, grid, gold)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {"convention_version": CONVENTION_VERSION, "dataset": gold.dataset_id, "cells": []}
    for i, cell in enumerate(cells):
        trace_path = out_dir / f"{gold.dataset_id}@{cell.policy.describe()}.tsv"
        trace_path.write_text(serialize_trace(cell.submission))
        report["cells"].append({
            "policy": cell.policy.describe(),
            "flops": cell.point.flops,
            "perf": cell.point.perf,
            "mean_exit_layer": cell.mean_exit_layer,
            "trace_file": str(trace_path),
        })
    (out_dir / "sweep_report.json").write_text(json.dumps(report, sort_keys=True, indent=1))
    _dump(report, args)


def cmd_train(args) -> None:
    config = load_train_config(args.config)
    result, data = run_config(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    history_path = out_dir / "history.json"
    report = {
        "config": str(args.config),
        "strategy": config.strategy.name,
        "history": result.history,
        "train_accuracy": exit_accuracies(result.net, data.x_train, data.y_train),
        "test_accuracy": exit_accuracies(result.net, data.x_test, data.y_test),
    }
    history_path.write_text(json.dumps(report, sort_keys=True, indent=1))
    if args.export_logits:
        outputs = export_logits(result.net, data.x_test)
        Path(args.export_logits).write_text(write_logits_text(outputs))
        report["logits_file"] = str(args.export_logits)
    if args.export_gold:
        gold = GoldFile(dataset_id=args.dataset_id, task_kind="classification",
                        metric_kind="Accuracy",
                        labels=tuple(int(v) for v in data.y_test))
        Path(args.export_gold).write_text(serialize_gold_file(gold))
        report["gold_file"] = str(args.export_gold)
    if args.export_seq_lens:
        rng = np.random.default_rng(config.seed)
        lens = rng.integers(args.seq_len_min, args.seq_len_max + 1,
                            size=len(data.y_test))
        Path(args.export_seq_lens).write_text("\n".join(str(v) for v in lens) + "\n")
        report["seq_lens_file"] = str(args.export_seq_lens)
    _dump(report, args)


def cmd_leaderboard(args) -> None:
    datasets = load_data_dir(_data_dir(args))
    store = SubmissionStore(args.store, datasets)
    entries = store.leaderboard(args.track)
    if args.format == "json":
        _dump({"track": args.track, "entries": entries}, args)
        return
    metric = "avg_performance" if args.track else "overall"
    header = f"{'rank':>4}  {'score':>9}  {'track':>5}  {'source':<14}  {'submitter':<12}  model"
    print(f"board: {args.track or 'main'} (ranked by {metric})")
    print(header)
    for e in entries:
        rank = e["rank"] if e["rank"] is not None else "-"
        value = e[metric]
        score = f"{value:9.2f}" if value is not None else "  partial"
        print(f"{rank:>4}  {score}  {str(e['track'] or '-'):>5}  {e['source']:<14}  "
              f"{e['submitter']:<12}  {e['model_name']}")


def cmd_serve(args) -> None:
    import uvicorn

    from .service import create_app

    datasets = load_data_dir(_data_dir(args))
    store = SubmissionStore(args.store, datasets)
    app = create_app(store)
    uvicorn.run(app, host=args.host, port=args.port)


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exitbench",
        description="Efficiency benchmark engine for early-exit NLP models")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_format(p):
        p.add_argument("--format", choices=("human", "json"), default="human")

    p = sub.add_parser("flops", help="mean/percentile FLOPs of trace files")
    p.add_argument("--spec", required=True)
    p.add_argument("traces", nargs="+", metavar="TRACE")
    add_format(p)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("params", help="parameter counts and leaderboard track")
    p.add_argument("--spec", required=True)
    add_format(p)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("score", help="score a trace-file bundle")
    p.add_argument("--spec", required=True)
    p.add_argument("--data-dir", help="directory with golds/ and curves/")
    p.add_argument("--trace", action="append", required=True, metavar="DATASET=PATH")
    add_format(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("frontier", help="Pareto frontier of a point list")
    p.add_argument("--points", required=True, help="JSON file of [flops, perf] pairs")
    add_format(p)
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("simulate", help="sweep exit policies over per-exit outputs")
    p.add_argument("--spec", required=True)
    p.add_argument("--logits", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--seq-lens", help="file with one sequence length per sample")
    p.add_argument("--seq-len", type=int, default=32, help="constant length fallback")
    p.add_argument("--entropy", help="comma-separated entropy thresholds")
    p.add_argument("--patience", help="comma-separated patience values")
    p.add_argument("--tau", type=float, default=0.1, help="regression patience tolerance")
    p.add_argument("--out-dir", required=True)
    add_format(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the multi-exit network from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--export-logits", help="write test-split per-exit logits here")
    p.add_argument("--export-gold", help="write the test-split gold labels here")
    p.add_argument("--dataset-id", default="synthetic")
    p.add_argument("--export-seq-lens", help="write synthetic per-sample lengths here")
    p.add_argument("--seq-len-min", type=int, default=8)
    p.add_argument("--seq-len-max", type=int, default=64)
    add_format(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("leaderboard", help="render leaderboards from a store")
    p.add_argument("--store", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--track")
    add_format(p)
    p.set_defaults(func=cmd_leaderboard)

    p = sub.add_parser("serve", help="start the submission service")
    p.add_argument("--store", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ExitBenchError as exc:
        print(json.dumps({"error": {"code": exc.code, "message": str(exc)}}),
              file=sys.stderr)
        for err_type, status in _EXIT_STATUS.items():
            if isinstance(exc, err_type):
                return status
        return 1
    except OSError as exc:
        print(json.dumps({"error": {"code": "unreadable-file", "message": str(exc)}}),
              file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
