import pytest

from cbgru import evaluation
from cbgru.data import ConfigError, InputError
from cbgru.evaluation import (
    PredictionRecord,
    bootstrap_ci,
    distance_curve,
    micro_f1,
    per_class_and_category,
)
from cbgru.tensor import make_rng


def rec(gold, pred, distance=1, sample_id="s"):
    return PredictionRecord(sample_id=sample_id, gold=gold, pred=pred, distance=distance)


def brute_force_micro(records, positive):
    """Independent oracle: build the full confusion matrix, then pool."""
    matrix = {}
    for r in records:
        matrix[(r.gold, r.pred)] = matrix.get((r.gold, r.pred), 0) + 1
    tp = sum(n for (g, p), n in matrix.items() if g == p and p in positive)
    fp = sum(n for (g, p), n in matrix.items() if p in positive and g != p)
    fn = sum(n for (g, p), n in matrix.items() if g in positive and g != p)
    p = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    r = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


class TestMicroF1:
    def test_all_correct(self):
        records = [rec("A", "A"), rec("B", "B")]
        assert micro_f1(records, {"A", "B"}) == (100.0, 100.0, 100.0)

    def test_hand_tally(self):
        records = [rec("A", "A"), rec("A", "Neg"), rec("Neg", "A")]
        p, r, f1 = micro_f1(records, {"A"})
        assert (p, r, f1) == (50.0, 50.0, 50.0)

    def test_all_predicted_negative(self):
        records = [rec("A", "Neg"), rec("Neg", "Neg")]
        assert micro_f1(records, {"A"}) == (0.0, 0.0, 0.0)

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            micro_f1([], {"A"})

    def test_matches_brute_force_on_random_sets(self):
        rng = make_rng(0)
        classes = ["A", "B", "C", "NegX", "NegY"]
        positive = {"A", "B", "C"}
        for _ in range(200):
            n = int(rng.integers(1, 60))
            records = [
                rec(classes[rng.integers(0, 5)], classes[rng.integers(0, 5)])
                for _ in range(n)
            ]
            assert micro_f1(records, positive) == pytest.approx(
                brute_force_micro(records, positive), abs=1e-12
            )

    def test_order_invariant(self):
        rng = make_rng(1)
        records = [rec("A" if rng.random() < 0.5 else "B", "A") for _ in range(30)]
        shuffled = list(records)
        rng.shuffle(shuffled)
        assert micro_f1(records, {"A"}) == micro_f1(shuffled, {"A"})

    def test_single_positive_class_equals_ovr(self):
        rng = make_rng(2)
        records = [
            rec("A" if rng.random() < 0.4 else "N", "A" if rng.random() < 0.5 else "N")
            for _ in range(50)
        ]
        micro = micro_f1(records, {"A"})
        table = per_class_and_category(records, {"A": "cat"}, ["A"])
        row = table["classes"]["A"]
        assert micro == (row["precision"], row["recall"], row["f1"])


class TestPerClassAndCategory:
    def test_perfect_single_class(self):
        records = [rec("A", "A")] * 3
        table = per_class_and_category(records, {"A": "cat"}, ["A"])
        row = table["classes"]["A"]
        assert (row["precision"], row["recall"], row["f1"], row["support"]) == (100.0, 100.0, 100.0, 3)

    def test_absent_class_zeroes(self):
        records = [rec("B", "B")]
        table = per_class_and_category(records, {"A": "c1", "B": "c1"}, ["A", "B"])
        row = table["classes"]["A"]
        assert (row["precision"], row["recall"], row["f1"], row["support"]) == (0.0, 0.0, 0.0, 0)

    def test_category_micro_matches_pooled_tally(self):
        rng = make_rng(3)
        classes = ["A", "B", "C", "N"]
        records = [
            rec(classes[rng.integers(0, 4)], classes[rng.integers(0, 4)])
            for _ in range(200)
        ]
        mapping = {"A": "cat1", "B": "cat1", "C": "cat2", "N": "cat1"}
        table = per_class_and_category(records, mapping, ["A", "B", "C"])
        cat1 = table["categories"]["cat1"]
        expected = brute_force_micro(records, {"A", "B"})
        assert (cat1["precision"], cat1["recall"], cat1["f1"]) == pytest.approx(expected, abs=1e-12)

    def test_unmapped_class_rejected(self):
        with pytest.raises(ConfigError):
            per_class_and_category([rec("A", "A")], {}, ["A"])


class TestBootstrap:
    def test_all_correct_degenerate(self):
        records = [rec("A", "A") for _ in range(30)]
        lo, hi = bootstrap_ci(records, lambda rs: micro_f1(rs, {"A"})[2], b=1000, seed=0)
        assert (lo, hi) == (100.0, 100.0)

    def test_constant_metric_zero_width(self):
        records = [rec("A", "A"), rec("A", "B")]
        lo, hi = bootstrap_ci(records, lambda rs: 42.0, b=200, seed=1)
        assert lo == hi == 42.0

    def test_deterministic_for_seed(self):
        rng = make_rng(4)
        records = [rec("A", "A" if rng.random() < 0.7 else "N") for _ in range(50)]
        metric = lambda rs: micro_f1(rs, {"A"})[2]
        assert bootstrap_ci(records, metric, b=200, seed=9) == bootstrap_ci(records, metric, b=200, seed=9)

    def test_small_b_rejected(self):
        with pytest.raises(InputError):
            bootstrap_ci([rec("A", "A")], lambda rs: 0.0, b=10)

    def test_width_shrinks_with_sample_size(self):
        def bernoulli_records(n, seed):
            rng = make_rng(seed)
            return [rec("A", "A" if rng.random() < 0.7 else "N") for _ in range(n)]

        accuracy = lambda rs: 100.0 * sum(r.gold == r.pred for r in rs) / len(rs)
        lo1, hi1 = bootstrap_ci(bernoulli_records(250, 0), accuracy, b=500, seed=3)
        lo2, hi2 = bootstrap_ci(bernoulli_records(1000, 1), accuracy, b=500, seed=3)
        ratio = (hi1 - lo1) / (hi2 - lo2)
        assert 1.4 < ratio < 2.6


class TestDistanceCurve:
    def test_single_distance_cluster(self):
        records = [rec("A", "A", distance=5) for _ in range(25)]
        points = distance_curve(records, {"A"})
        # truncated at d=5; window [d-2, d+2] covers the cluster from d=3 on
        assert points[-1][0] == 5
        assert all(f1 == 100.0 for _, f1 in points)

    def test_truncation_by_exact_count(self):
        records = [rec("A", "A", distance=5) for _ in range(25)]
        records += [rec("A", "A", distance=40) for _ in range(3)]
        points = distance_curve(records, {"A"})
        assert max(d for d, _ in points) == 5

    def test_points_match_filtered_micro(self):
        rng = make_rng(5)
        records = [
            rec("A" if rng.random() < 0.6 else "N", "A" if rng.random() < 0.5 else "N",
                distance=int(rng.integers(1, 12)))
            for _ in range(400)
        ]
        for d, f1 in distance_curve(records, {"A"}, window=2, min_support=20):
            subset = [r for r in records if d - 2 <= r.distance <= d + 2]
            assert f1 == micro_f1(subset, {"A"})[2]

    def test_no_support_warns_and_returns_empty(self):
        records = [rec("A", "A", distance=3)]
        with pytest.warns(UserWarning):
            assert distance_curve(records, {"A"}) == []


class TestReportIO:
    def test_predictions_tsv_round_trip(self, tmp_path):
        records = [rec("A", "B", distance=4, sample_id="s1"), rec("B", "B", distance=2, sample_id="s2")]
        path = str(tmp_path / "preds.tsv")
        evaluation.write_predictions_tsv(path, records)
        assert evaluation.read_predictions_tsv(path) == records

    def test_report_build_and_format(self):
        records = [rec("A", "A", distance=3) for _ in range(30)]
        report = evaluation.build_report(records, {"A": "cat"}, ["A"], with_ci=True, b=100)
        assert report["micro"]["f1"] == 100.0
        assert report["micro"]["f1_ci"] == (100.0, 100.0)
        text = evaluation.format_report(report)
        assert "micro" in text and "100.0" in text

    def test_report_json_written(self, tmp_path):
        records = [rec("A", "A", distance=1)] * 25
        report = evaluation.build_report(records, {"A": "cat"}, ["A"])
        path = str(tmp_path / "report.json")
        evaluation.write_report_json(path, report)
        import json

        loaded = json.load(open(path))
        assert loaded["micro"]["f1"] == 100.0
