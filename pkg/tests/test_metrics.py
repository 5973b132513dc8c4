import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exitbench.errors import GoldFileError, MetricError, UndefinedCorrelationError
from exitbench.metrics import (
    GoldFile,
    accuracy,
    dataset_metric,
    f1_binary,
    parse_gold_file,
    pearson,
    rank_average_ties,
    serialize_gold_file,
    spearman,
)


def pearson_oracle(x, y):
    # plain covariance / sigma computation, loop by loop
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sx = math.sqrt(sum((a - mx) ** 2 for a in x))
    sy = math.sqrt(sum((b - my) ** 2 for b in y))
    return cov / (sx * sy)


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy([0, 1, 1], [0, 1, 1]) == 1.0

    def test_all_wrong(self):
        assert accuracy([1, 0], [0, 1]) == 0.0

    def test_half(self):
        assert accuracy([1, 0, 1, 0], [1, 1, 0, 0]) == 0.5

    def test_length_mismatch(self):
        with pytest.raises(MetricError):
            accuracy([1], [1, 0])


class TestF1:
    def test_half_half(self):
        assert f1_binary([1, 0, 1, 0], [1, 1, 0, 0]) == pytest.approx(0.5)

    def test_no_positive_predictions(self):
        assert f1_binary([0, 0, 0], [1, 0, 0]) == 0.0

    def test_hand_computed(self):
        assert f1_binary([1, 1, 1], [1, 1, 0]) == pytest.approx(0.8)

    def test_non_binary_rejected(self):
        with pytest.raises(MetricError):
            f1_binary([2, 0], [1, 0])


class TestPearson:
    def test_perfect_linear(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)

    def test_perfect_inverse(self):
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_matches_oracle_on_random_vectors(self):
        rng = random.Random(3)
        for _ in range(20):
            x = [rng.uniform(-5, 5) for _ in range(10)]
            y = [rng.uniform(-5, 5) for _ in range(10)]
            assert pearson(x, y) == pytest.approx(pearson_oracle(x, y), abs=1e-12)

    def test_zero_variance(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson([1, 1, 1], [1, 2, 3])


class TestSpearman:
    def test_monotone_transform_gives_one(self):
        x = [0.3, 1.7, 2.2, 5.0]
        y = [math.exp(v) for v in x]
        assert spearman(x, y) == pytest.approx(1.0)

    def test_average_tie_ranks(self):
        assert rank_average_ties([1, 2, 2]) == [1.0, 2.5, 2.5]

    def test_matches_rank_then_pearson_oracle(self):
        rng = random.Random(5)
        for _ in range(20):
            x = [rng.choice([1.0, 2.0, 3.5, 7.0]) for _ in range(12)]
            y = [rng.uniform(0, 1) for _ in range(12)]
            try:
                got = spearman(x, y)
            except UndefinedCorrelationError:
                continue
            assert got == pytest.approx(pearson_oracle(rank_average_ties(x), rank_average_ties(y)), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-10_000, 10_000), min_size=3, max_size=20, unique=True)
           .map(lambda xs: [v / 100 for v in xs]))
    def test_invariant_under_strictly_monotone_transform(self, x):
        y = [3 * v + 1 for v in x]
        transformed = [v ** 3 for v in x]
        assert spearman(x, y) == pytest.approx(1.0)
        assert spearman(transformed, y) == pytest.approx(spearman(x, y))


class TestDatasetMetric:
    def test_acc_f1_mean(self):
        gold = GoldFile(dataset_id="mrpc", task_kind="classification",
                        metric_kind="AccF1Mean", labels=(1, 1, 0, 0))
        assert dataset_metric(gold, [1, 0, 1, 0]) == pytest.approx(50.0)

    def test_accuracy_perfect(self):
        gold = GoldFile(dataset_id="sst2", task_kind="classification",
                        metric_kind="Accuracy", labels=(0, 1, 1))
        assert dataset_metric(gold, [0, 1, 1]) == 100.0

    def test_pearson_spearman_perfect(self):
        gold = GoldFile(dataset_id="stsb", task_kind="regression",
                        metric_kind="PearsonSpearmanMean", labels=(1.0, 2.0, 3.0))
        assert dataset_metric(gold, [2.0, 4.0, 6.0]) == pytest.approx(100.0)

    def test_permutation_invariance(self):
        rng = random.Random(9)
        golds = [rng.randint(0, 1) for _ in range(16)]
        preds = [rng.randint(0, 1) for _ in range(16)]
        gold = GoldFile(dataset_id="d", task_kind="classification",
                        metric_kind="AccF1Mean", labels=tuple(golds))
        base = dataset_metric(gold, preds)
        order = list(range(16))
        rng.shuffle(order)
        gold2 = GoldFile(dataset_id="d", task_kind="classification",
                         metric_kind="AccF1Mean", labels=tuple(golds[i] for i in order))
        assert dataset_metric(gold2, [preds[i] for i in order]) == pytest.approx(base)

    def test_range_bounds(self):
        rng = random.Random(1)
        for _ in range(10):
            labels = tuple(rng.randint(0, 1) for _ in range(8))
            preds = [rng.randint(0, 1) for _ in range(8)]
            gold = GoldFile(dataset_id="d", task_kind="classification",
                            metric_kind="AccF1Mean", labels=labels)
            assert 0.0 <= dataset_metric(gold, preds) <= 100.0

    def test_metric_task_mismatch(self):
        with pytest.raises(GoldFileError):
            GoldFile(dataset_id="d", task_kind="classification",
                     metric_kind="PearsonSpearmanMean", labels=(1, 0))

    def test_length_mismatch(self):
        gold = GoldFile(dataset_id="d", task_kind="classification",
                        metric_kind="Accuracy", labels=(1, 0))
        with pytest.raises(MetricError):
            dataset_metric(gold, [1])


class TestGoldFiles:
    def test_round_trip(self):
        gold = GoldFile(dataset_id="sst2", task_kind="classification",
                        metric_kind="Accuracy", labels=(0, 1, 1, 0))
        assert parse_gold_file(serialize_gold_file(gold)) == gold

    def test_regression_round_trip(self):
        gold = GoldFile(dataset_id="stsb", task_kind="regression",
                        metric_kind="PearsonSpearmanMean", labels=(0.5, 2.25, 4.0))
        assert parse_gold_file(serialize_gold_file(gold)) == gold

    def test_missing_header_field(self):
        with pytest.raises(GoldFileError):
            parse_gold_file("dataset_id=x\ttask_kind=classification\n0\t1\n")

    def test_out_of_order_indices(self):
        text = ("dataset_id=x\ttask_kind=classification\tmetric_kind=Accuracy\n"
                "1\t0\n0\t1\n")
        with pytest.raises(GoldFileError):
            parse_gold_file(text)
