import json
from pathlib import Path

import pytest

from exitbench.cli import main

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"
SPEC = str(FIXTURES / "specs" / "bert_base.json")


def run(capsys, *argv):
    status = main(list(argv))
    captured = capsys.readouterr()
    return status, captured.out, captured.err


class TestParams:
    def test_reports_110m_track(self, capsys):
        status, out, _ = run(capsys, "params", "--spec", SPEC, "--format", "json")
        assert status == 0
        report = json.loads(out)
        assert report["track"] == "110M"
        assert report["backbone"] == 108_891_648

    def test_human_format(self, capsys):
        status, out, _ = run(capsys, "params", "--spec", SPEC)
        assert status == 0
        assert "track: 110M" in out


class TestFlops:
    def test_summary(self, capsys):
        trace = str(FIXTURES / "traces" / "imdb@6L.tsv")
        status, out, _ = run(capsys, "flops", "--spec", SPEC, trace, "--format", "json")
        assert status == 0
        report = json.loads(out)
        summary = report["files"][trace]
        assert summary["count"] == 16
        assert summary["min"] <= summary["p50"] <= summary["max"]

    def test_empty_trace_file_distinct_error(self, capsys, tmp_path):
        empty = tmp_path / "empty.tsv"
        empty.write_text("index\tpred\tmodules\n")
        status, out, err = run(capsys, "flops", "--spec", SPEC, str(empty))
        assert status == 5
        assert json.loads(err)["error"]["code"] == "empty-submission"

    def test_unreadable_file(self, capsys, tmp_path):
        status, _, err = run(capsys, "flops", "--spec", SPEC, str(tmp_path / "nope.tsv"))
        assert status != 0
        assert "error" in json.loads(err)

    def test_bad_spec_distinct_error(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"model_name": "x"}))
        trace = str(FIXTURES / "traces" / "imdb@6L.tsv")
        status, _, err = run(capsys, "flops", "--spec", str(bad), trace)
        assert status == 3
        assert json.loads(err)["error"]["code"] == "invalid-spec"


class TestScore:
    def test_fixture_scores_zero(self, capsys):
        status, out, _ = run(
            capsys, "score", "--spec", SPEC, "--data-dir", str(FIXTURES),
            "--trace", f"imdb={FIXTURES / 'traces' / 'imdb@6L.tsv'}",
            "--trace", f"imdb={FIXTURES / 'traces' / 'imdb@12L.tsv'}")
        assert status == 0
        assert "score: 0.00" in out

    def test_machine_output_byte_identical(self, capsys):
        argv = ["score", "--spec", SPEC, "--data-dir", str(FIXTURES),
                "--trace", f"imdb={FIXTURES / 'traces' / 'imdb@6L.tsv'}",
                "--format", "json"]
        _, first, _ = run(capsys, *argv)
        _, second, _ = run(capsys, *argv)
        assert first == second

    def test_full_bundle_has_overall(self, capsys):
        argv = ["score", "--spec", SPEC, "--data-dir", str(FIXTURES), "--format", "json"]
        for ds in ("sst2", "imdb", "snli", "scitail", "mrpc", "stsb"):
            for label in ("6L", "12L"):
                argv += ["--trace", f"{ds}={FIXTURES / 'traces' / f'{ds}@{label}.tsv'}"]
        status, out, _ = run(capsys, *argv)
        assert status == 0
        report = json.loads(out)
        assert report["overall"] is not None
        assert report["partial"] is False
        # every engine-derived curve scores zero against its own traces
        for ds in ("imdb", "snli", "scitail", "mrpc", "stsb"):
            assert report["datasets"][ds]["score"] == pytest.approx(0.0, abs=1e-12)


class TestFrontier:
    def test_columnar_output(self, capsys, tmp_path):
        points = tmp_path / "points.json"
        points.write_text(json.dumps([[1, 80], [2, 90], [3, 85]]))
        status, out, _ = run(capsys, "frontier", "--points", str(points))
        assert status == 0
        assert out.splitlines() == ["1.0\t80.0", "2.0\t90.0"]


class TestLeaderboard:
    def test_renders_seeded_store(self, capsys, tmp_path):
        from exitbench.service import SubmissionStore, load_data_dir

        store = SubmissionStore(tmp_path / "store", load_data_dir(FIXTURES))
        datasets = ("sst2", "imdb", "snli", "scitail", "mrpc", "stsb")
        store.submit({
            "kind": "paper", "submitter": "a", "model_name": "m",
            "params": 30_000_000,
            "points": {ds: [[1e9, 80.0], [2e9, 90.0]] for ds in datasets}})
        status, out, _ = run(
            capsys, "leaderboard", "--store", str(tmp_path / "store"),
            "--data-dir", str(FIXTURES), "--format", "json")
        assert status == 0
        entries = json.loads(out)["entries"]
        assert len(entries) == 1 and entries[0]["rank"] == 1
        assert entries[0]["track"] == "40M"

        status, out, _ = run(
            capsys, "leaderboard", "--store", str(tmp_path / "store"),
            "--data-dir", str(FIXTURES), "--track", "40M", "--format", "json")
        assert status == 0
        assert len(json.loads(out)["entries"]) == 1


class TestTrainSimulate:
    def test_end_to_end_smoke(self, capsys, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "num_blocks": 4, "width": 6, "num_labels": 2, "seed": 11,
            "strategy": "ge", "epochs": 25, "lr": 0.5,
            "n_samples": 160, "separation": 4.0}))
        logits = tmp_path / "logits.jsonl"
        gold = tmp_path / "gold.tsv"
        lens = tmp_path / "lens.txt"
        status, out, _ = run(
            capsys, "train", "--config", str(config), "--out-dir", str(tmp_path / "run"),
            "--export-logits", str(logits), "--export-gold", str(gold),
            "--export-seq-lens", str(lens), "--format", "json")
        assert status == 0
        report = json.loads(out)
        assert len(report["test_accuracy"]) == 4

        out_dir = tmp_path / "sweep"
        status, out, _ = run(
            capsys, "simulate", "--spec", str(FIXTURES / "specs" / "desk.json"),
            "--logits", str(logits), "--gold", str(gold), "--seq-lens", str(lens),
            "--entropy", "0.0,0.2,0.5", "--out-dir", str(out_dir), "--format", "json")
        assert status == 0
        report = json.loads(out)
        assert len(report["cells"]) == 3
        for cell in report["cells"]:
            assert Path(cell["trace_file"]).exists()
        # threshold 0 keeps every sample at the top layer
        assert report["cells"][0]["mean_exit_layer"] == 4.0
