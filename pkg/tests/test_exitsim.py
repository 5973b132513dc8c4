import math
import random

import pytest

from exitbench.costmodel import forward_flops
from exitbench.errors import InvalidDistribution, PolicyMismatchError
from exitbench.exitsim import (
    EntropyPolicy,
    ExitOutputs,
    OutputsSet,
    PatiencePolicy,
    RegressionPatiencePolicy,
    entropy,
    entropy_exit,
    parse_logits_text,
    patience_exit,
    patience_exit_regression,
    sweep_policy,
    write_logits_text,
)
from exitbench.metrics import GoldFile
from exitbench.trace import parse_trace_file, serialize_trace, trace_flops


def classification_sample(index, rows):
    return ExitOutputs(index=index, per_exit=tuple(tuple(float(v) for v in r) for r in rows))


def logits_for_probs(probs):
    return tuple(math.log(p) if p > 0 else -1e9 for p in probs)


class TestEntropy:
    def test_one_hot_is_zero(self):
        assert entropy([1.0, 0.0, 0.0]) == 0.0

    def test_uniform_two_classes(self):
        assert entropy([0.5, 0.5]) == pytest.approx(math.log(2))

    def test_hand_evaluated(self):
        assert entropy([0.99, 0.01]) == pytest.approx(0.056002, abs=1e-6)

    def test_invalid_distribution(self):
        with pytest.raises(InvalidDistribution):
            entropy([0.4, 0.4])
        with pytest.raises(InvalidDistribution):
            entropy([1.2, -0.2])


class TestEntropyExit:
    def test_threshold_zero_exits_at_top(self):
        sample = classification_sample(0, [(9.0, 0.0)] * 4)
        assert entropy_exit(sample, 0.0)[0] == 4

    def test_threshold_above_ln_c_exits_first(self):
        sample = classification_sample(0, [(3.0, 1.0), (0.0, 5.0)])
        layer, pred = entropy_exit(sample, math.log(2) + 0.01)
        assert (layer, pred) == (1, 0)

    def test_confident_first_exit(self):
        rows = [logits_for_probs((0.99, 0.01)), logits_for_probs((0.5, 0.5))]
        layer, pred = entropy_exit(classification_sample(0, rows), 0.1)
        assert (layer, pred) == (1, 0)

    def test_prediction_comes_from_exit_layer(self):
        rows = [logits_for_probs((0.5, 0.5)), logits_for_probs((0.01, 0.99))]
        layer, pred = entropy_exit(classification_sample(0, rows), 0.1)
        assert (layer, pred) == (2, 1)

    def test_rejects_regression_outputs(self):
        sample = ExitOutputs(index=0, per_exit=(1.0, 2.0))
        with pytest.raises(PolicyMismatchError):
            entropy_exit(sample, 0.5)

    def test_exit_layer_monotone_in_threshold(self):
        rng = random.Random(23)
        for _ in range(30):
            rows = [tuple(rng.uniform(-3, 3) for _ in range(3)) for _ in range(6)]
            sample = classification_sample(0, rows)
            thresholds = [0.0, 0.2, 0.5, 0.9, math.log(3) + 0.1]
            layers = [entropy_exit(sample, t)[0] for t in thresholds]
            assert all(a >= b for a, b in zip(layers, layers[1:]))


class TestPatienceExit:
    def test_counter_simulation(self):
        rows = [(1.0, 0.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0)]
        layer, pred = patience_exit(classification_sample(0, rows), 2)
        assert (layer, pred) == (4, 1)

    def test_all_agree_patience_one(self):
        rows = [(2.0, 0.0)] * 4
        assert patience_exit(classification_sample(0, rows), 1) == (2, 0)

    def test_alternating_never_fires(self):
        rows = [(1.0, 0.0), (0.0, 1.0)] * 3
        layer, pred = patience_exit(classification_sample(0, rows), 1)
        assert layer == 6

    def test_exit_layer_monotone_in_patience(self):
        rng = random.Random(29)
        for _ in range(30):
            rows = [tuple(rng.uniform(-1, 1) for _ in range(2)) for _ in range(8)]
            sample = classification_sample(0, rows)
            layers = [patience_exit(sample, t)[0] for t in (1, 2, 3, 4)]
            assert all(a <= b for a, b in zip(layers, layers[1:]))


class TestRegressionPatience:
    def test_equal_values(self):
        sample = ExitOutputs(index=0, per_exit=(2.0, 2.0, 2.0, 2.0))
        assert patience_exit_regression(sample, 2, 0.1) == (3, 2.0)

    def test_tau_zero_varying_values(self):
        sample = ExitOutputs(index=0, per_exit=(1.0, 2.0, 3.0))
        layer, value = patience_exit_regression(sample, 1, 0.0)
        assert (layer, value) == (3, 3.0)

    def test_hand_simulation(self):
        sample = ExitOutputs(index=0, per_exit=(1.0, 1.05, 1.06))
        assert patience_exit_regression(sample, 2, 0.1) == (3, 1.06)

    def test_rejects_classification_outputs(self):
        sample = classification_sample(0, [(1.0, 0.0)] * 2)
        with pytest.raises(PolicyMismatchError):
            patience_exit_regression(sample, 1, 0.1)


def build_outputs(rng, n_samples, num_exits, num_labels):
    samples = []
    for i in range(n_samples):
        rows = [tuple(rng.uniform(-4, 4) for _ in range(num_labels)) for _ in range(num_exits)]
        samples.append(classification_sample(i, rows))
    return OutputsSet(task_kind="classification", num_exits=num_exits,
                      num_labels=num_labels, samples=samples)


class TestSweep:
    @pytest.fixture
    def setup(self, tiny_spec):
        rng = random.Random(31)
        outputs = build_outputs(rng, 16, tiny_spec.num_layers, 2)
        seq_lens = [rng.randint(4, 20) for _ in range(16)]
        gold = GoldFile(dataset_id="synth", task_kind="classification",
                        metric_kind="Accuracy",
                        labels=tuple(rng.randint(0, 1) for _ in range(16)))
        return outputs, seq_lens, gold

    def test_threshold_zero_full_depth(self, tiny_spec, setup):
        outputs, seq_lens, gold = setup
        cells = sweep_policy(outputs, tiny_spec, seq_lens, [EntropyPolicy(0.0)], gold)
        expected = sum(forward_flops(tiny_spec, n, tiny_spec.num_layers) for n in seq_lens) / 16
        assert cells[0].point.flops == pytest.approx(expected)
        assert cells[0].mean_exit_layer == tiny_spec.num_layers

    def test_flops_match_per_row_recosting(self, tiny_spec, setup):
        outputs, seq_lens, gold = setup
        grid = [EntropyPolicy(t) for t in (0.0, 0.3, 0.69)]
        for cell in sweep_policy(outputs, tiny_spec, seq_lens, grid, gold):
            recosted = [trace_flops(row, tiny_spec) for row in cell.submission.rows]
            assert cell.point.flops == pytest.approx(sum(recosted) / len(recosted))

    def test_traces_round_trip(self, tiny_spec, setup):
        outputs, seq_lens, gold = setup
        cells = sweep_policy(outputs, tiny_spec, seq_lens, [PatiencePolicy(2)], gold)
        text = serialize_trace(cells[0].submission)
        again = parse_trace_file(text, dataset_id="synth", label=cells[0].submission.label)
        assert again == cells[0].submission

    def test_mean_flops_bracketed_by_depth_extremes(self, tiny_spec, setup):
        outputs, seq_lens, gold = setup
        lo = sum(forward_flops(tiny_spec, n, 1) for n in seq_lens) / len(seq_lens)
        hi = sum(forward_flops(tiny_spec, n, tiny_spec.num_layers) for n in seq_lens) / len(seq_lens)
        grid = [EntropyPolicy(t) for t in (0.0, 0.2, 0.5, 10.0)] + [PatiencePolicy(1)]
        for cell in sweep_policy(outputs, tiny_spec, seq_lens, grid, gold):
            assert lo - 1e-9 <= cell.point.flops <= hi + 1e-9

    def test_per_sample_layers_monotone_across_grid(self, tiny_spec, setup):
        outputs, seq_lens, gold = setup
        thresholds = (0.0, 0.1, 0.3, 0.6, 1.0)
        per_policy = []
        for t in thresholds:
            per_policy.append([entropy_exit(s, t)[0] for s in outputs.samples])
        for a, b in zip(per_policy, per_policy[1:]):
            assert all(x >= y for x, y in zip(a, b))

    def test_misaligned_inputs_rejected(self, tiny_spec, setup):
        outputs, seq_lens, gold = setup
        with pytest.raises(Exception, match="sequence lengths"):
            sweep_policy(outputs, tiny_spec, seq_lens[:-1], [EntropyPolicy(0.0)], gold)

    def test_regression_gold_rejects_entropy(self, tiny_spec):
        samples = [
            ExitOutputs(index=i, per_exit=(0.4 * i, 0.4 * i + 0.1, 0.4 * i + 0.2))
            for i in range(4)
        ]
        outputs = OutputsSet(task_kind="regression", num_exits=3, num_labels=None,
                             samples=samples)
        gold = GoldFile(dataset_id="reg", task_kind="regression",
                        metric_kind="PearsonSpearmanMean", labels=(0.5, 1.0, 1.5, 2.0))
        with pytest.raises(PolicyMismatchError):
            sweep_policy(outputs, tiny_spec, [5, 5, 5, 5], [EntropyPolicy(0.1)], gold)
        cells = sweep_policy(outputs, tiny_spec, [5, 5, 5, 5],
                             [RegressionPatiencePolicy(1, tau=0.5)], gold)
        assert cells[0].submission.rows[1].pred == pytest.approx(0.5)


class TestLogitsFiles:
    def test_round_trip_classification(self):
        rng = random.Random(37)
        outputs = build_outputs(rng, 5, 3, 4)
        text = write_logits_text(outputs)
        again = parse_logits_text(text)
        assert again == outputs

    def test_round_trip_regression(self):
        samples = [ExitOutputs(index=i, per_exit=(0.5 * i, 0.5 * i + 0.1)) for i in range(3)]
        outputs = OutputsSet(task_kind="regression", num_exits=2, num_labels=None,
                             samples=samples)
        assert parse_logits_text(write_logits_text(outputs)) == outputs

    def test_bad_schema_rejected(self):
        with pytest.raises(Exception, match="schema"):
            parse_logits_text('{"schema": "other/9"}\n')

    def test_width_mismatch_rejected(self):
        with pytest.raises(Exception, match="width"):
            OutputsSet(task_kind="classification", num_exits=1, num_labels=3,
                       samples=[classification_sample(0, [(1.0, 2.0)])])
