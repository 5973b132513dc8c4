#!/usr/bin/env python3
"""Regenerate the synthetic fixture tree under fixtures/.

Everything here is deterministic (fixed seed), so the checked-in files can
always be reproduced byte-identically. The sst2 baseline curve carries the
two externally published knots; every other curve is derived by running the
engine over the fixture trace files, which makes those trace files score
exactly zero against their own curve.
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from exitbench.costmodel import ModelSpec, model_spec_to_dict
from exitbench.metrics import GoldFile, dataset_metric, serialize_gold_file
from exitbench.scoring import PerfPoint, curve_to_dict, build_baseline_curve
from exitbench.trace import SampleTrace, SubmissionFile, parse_trace_file, serialize_trace, submission_flops

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"
SEED = 20240

N_ROWS = 16

DATASETS = {
    "sst2": ("classification", "Accuracy", 2),
    "imdb": ("classification", "Accuracy", 2),
    "snli": ("classification", "Accuracy", 3),
    "scitail": ("classification", "Accuracy", 2),
    "mrpc": ("classification", "AccF1Mean", 2),
    "stsb": ("regression", "PearsonSpearmanMean", None),
}

SST2_ANCHORED_KNOTS = [[6700e6, 87.0], [13399e6, 88.6]]


def bert_base_spec() -> ModelSpec:
    return ModelSpec(
        model_name="bert-base-geometry", hidden_size=768, num_layers=12,
        num_heads=12, ffn_size=3072, vocab_size=30522, max_positions=512,
        num_segment_types=2, num_labels=2)


def desk_spec() -> ModelSpec:
    return ModelSpec(
        model_name="desk-scale", hidden_size=32, num_layers=4, num_heads=4,
        ffn_size=64, vocab_size=1000, max_positions=128, num_segment_types=2,
        num_labels=2)


def make_gold(rng, dataset_id):
    task_kind, metric_kind, num_classes = DATASETS[dataset_id]
    if task_kind == "classification":
        labels = tuple(rng.randrange(num_classes) for _ in range(N_ROWS))
    else:
        labels = tuple(float(f"{rng.uniform(0, 5):.6f}") for _ in range(N_ROWS))
    return GoldFile(dataset_id=dataset_id, task_kind=task_kind,
                    metric_kind=metric_kind, labels=labels)


def perturb_preds(rng, gold, flips):
    task_kind, _, num_classes = DATASETS[gold.dataset_id]
    if task_kind == "classification":
        preds = list(gold.labels)
        for i in rng.sample(range(N_ROWS), flips):
            preds[i] = (preds[i] + 1) % num_classes
        return preds
    noise = 0.15 * flips
    return [float(f"{v + rng.uniform(-noise, noise):.6f}") for v in gold.labels]


def build_trace(gold, preds, seq_lens, exit_layer, label):
    rows = []
    for i, (pred, n) in enumerate(zip(preds, seq_lens)):
        steps = [((n,), "emb")]
        steps += [((n, 768), f"layer_{k}") for k in range(1, exit_layer + 1)]
        steps.append(((768,), f"exit_{exit_layer}"))
        rows.append(SampleTrace(index=i, pred=pred, steps=tuple(steps)))
    return SubmissionFile(dataset_id=gold.dataset_id, rows=rows, label=label)


def main() -> None:
    rng = random.Random(SEED)
    spec = bert_base_spec()

    for sub_dir in ("specs", "golds", "curves", "traces", "train"):
        (FIXTURES / sub_dir).mkdir(parents=True, exist_ok=True)

    (FIXTURES / "specs" / "bert_base.json").write_text(
        json.dumps(model_spec_to_dict(spec), indent=1) + "\n")
    (FIXTURES / "specs" / "desk.json").write_text(
        json.dumps(model_spec_to_dict(desk_spec()), indent=1) + "\n")

    for dataset_id in DATASETS:
        gold = make_gold(rng, dataset_id)
        (FIXTURES / "golds" / f"{dataset_id}.tsv").write_text(serialize_gold_file(gold))

        # one test set, so both operating points share the sequence lengths
        seq_lens = [rng.randint(8, 64) for _ in range(N_ROWS)]
        knots = []
        for exit_layer, flips, label in ((6, 4, "6L"), (12, 1, "12L")):
            preds = perturb_preds(rng, gold, flips)
            text = serialize_trace(build_trace(gold, preds, seq_lens, exit_layer, label))
            (FIXTURES / "traces" / f"{dataset_id}@{label}.tsv").write_text(text)
            # knots from the canonical file bytes, so scoring those files
            # against the derived curve lands on exactly zero
            parsed = parse_trace_file(text, dataset_id=dataset_id, label=label)
            flops = submission_flops(parsed, spec).mean
            perf = dataset_metric(gold, [r.pred for r in parsed.rows])
            knots.append(PerfPoint(flops=flops, perf=perf))

        if dataset_id == "sst2":
            curve = {"dataset_id": "sst2", "knots": SST2_ANCHORED_KNOTS}
        else:
            curve = curve_to_dict(build_baseline_curve(knots, dataset_id))
        (FIXTURES / "curves" / f"{dataset_id}.json").write_text(
            json.dumps(curve, indent=1) + "\n")

    train_config = {
        "num_blocks": 4, "width": 6, "num_labels": 2, "seed": 2024,
        "strategy": "sum", "epochs": 40, "lr": 0.5, "batch_size": 32,
        "n_samples": 240, "separation": 4.0,
    }
    (FIXTURES / "train" / "config_sum.json").write_text(
        json.dumps(train_config, indent=1) + "\n")

    print(f"fixtures written under {FIXTURES}")


if __name__ == "__main__":
    main()
