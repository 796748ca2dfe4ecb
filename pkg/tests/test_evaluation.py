import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from admtl.evaluation import (ConfusionMatrix, attention_heatmap, export_attention, macro_prf, pr_curve_points,
                              write_pr_points)
from admtl.text import RelationExample

from _support import count_oracle, random_examples, sweep_oracle, tiny_model


def metrics_of(counts):
    labels = tuple(f"c{i}" for i in range(len(counts)))
    return macro_prf(ConfusionMatrix(labels, np.array(counts)))


def test_hand_counted_two_class():
    m = metrics_of([[3, 1], [2, 4]])
    assert (m.precision["c0"], m.recall["c0"]) == (3 / 5, 3 / 4)
    assert (m.precision["c1"], m.recall["c1"]) == (4 / 5, 4 / 6)
    # per-class F1 = 2/3 and 8/11, unweighted mean
    assert m.macro_f1 == pytest.approx((2 / 3 + 8 / 11) / 2, abs=1e-12)
    assert m.macro_f1 == pytest.approx(0.69697, abs=1e-5)


def test_perfect_diagonal():
    m = metrics_of([[4, 0, 0], [0, 1, 0], [0, 0, 2]])
    assert m.macro_precision == m.macro_recall == m.macro_f1 == m.accuracy == 1.0


def test_constant_predictor_on_balanced_classes():
    m = metrics_of([[5, 0], [5, 0]])
    assert m.macro_recall == 0.5
    assert m.precision["c1"] == 0.0 and m.f1["c1"] == 0.0


def test_never_gold_class_is_not_averaged():
    m = metrics_of([[2, 1, 0], [0, 3, 1], [0, 0, 0]])
    assert m.macro_recall == pytest.approx((2 / 3 + 3 / 4) / 2)
    assert m.support["c2"] == 0


def test_empty_confusion_rejected():
    with pytest.raises(ValueError, match="empty"):
        metrics_of([[0, 0], [0, 0]])


def test_weighted_f1():
    m = metrics_of([[3, 1], [2, 4]])
    assert m.weighted_f1 == pytest.approx((4 * 2 / 3 + 6 * 8 / 11) / 10)


def test_exhaustive_two_by_two():
    for cells in itertools.product(range(6), repeat=4):
        if sum(cells) == 0:
            continue
        counts = [list(cells[:2]), list(cells[2:])]
        m = metrics_of(counts)
        assert [m.macro_precision, m.macro_recall, m.macro_f1] == pytest.approx(count_oracle(counts), abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.integers(3, 4).flatmap(lambda c: st.lists(st.lists(st.integers(0, 5), min_size=c, max_size=c),
                                                     min_size=c, max_size=c)))
def test_matches_count_oracle(counts):
    if sum(map(sum, counts)) == 0:
        return
    m = metrics_of(counts)
    assert [m.macro_precision, m.macro_recall, m.macro_f1] == pytest.approx(count_oracle(counts), abs=1e-12)
    for v in [*m.precision.values(), *m.recall.values(), *m.f1.values()]:
        assert 0.0 <= v <= 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abc"), st.sampled_from("abc")), min_size=1, max_size=30), st.randoms())
def test_order_invariance(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    one = macro_prf(ConfusionMatrix.from_labels(*zip(*pairs), "abc"))
    two = macro_prf(ConfusionMatrix.from_labels(*zip(*shuffled), "abc"))
    assert one == two


class TestPrCurve:
    def test_perfect_ranking(self):
        pts = pr_curve_points([0.9, 0.8, 0.7, 0.2, 0.1], [1, 1, 1, 0, 0])
        assert [p for _, p in pts[:3]] == [1.0, 1.0, 1.0]
        assert pts[2] == (1.0, 1.0)

    def test_all_scores_equal(self):
        assert pr_curve_points([0.5] * 4, [1, 0, 0, 1]) == [(1.0, 0.5)]

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from([0.1, 0.25, 0.5, 0.75, 0.9]), st.integers(0, 1)),
                    min_size=1, max_size=8))
    def test_matches_threshold_sweep(self, rows):
        scores, gold = zip(*rows)
        pts = pr_curve_points(scores, gold)
        assert pts == pytest.approx(sweep_oracle(scores, gold))
        recalls = [r for r, _ in pts]
        assert recalls == sorted(recalls)

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError, match="binary"):
            pr_curve_points([0.1, 0.2], [0, 2])

    def test_csv(self, tmp_path):
        path = tmp_path / "pr.csv"
        write_pr_points(path, [(0.5, 1.0), (1.0, 0.5)])
        assert path.read_text().splitlines() == ["recall,precision", "0.5,1.0", "1.0,0.5"]


class TestAttentionExport:
    def test_rows_sum_to_one_and_no_pad(self, tmp_path):
        model, rng = tiny_model("mtl_adversarial")
        ex = RelationExample("e", "d", "a", ["t1", "t2", "t3", "t4", "t5"], (0, 1), (3, 4), "x")
        heat = export_attention(ex, model, "a", tmp_path / "h.csv")
        assert heat.weights.shape == (2, 5) and len(heat.tokens) == 5
        np.testing.assert_allclose(heat.weights.sum(axis=1), 1.0, atol=1e-9)
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "aspect,ENTITY,t2,t3,ENTITY,t5" and len(lines) == 3

    def test_shortest_input(self):
        # two adjacent one-token entities is the shortest valid example
        model, _ = tiny_model()
        heat = attention_heatmap(RelationExample("e", "d", "a", ["t1", "t2"], (0, 1), (1, 2), "x"), model, "a",
                                 "shared")
        assert heat.tokens == ["ENTITY", "ENTITY"]
        assert heat.weights.shape == (2, 2)
        np.testing.assert_allclose(heat.weights.sum(axis=1), 1.0, atol=1e-12)

    def test_re_export_is_byte_identical(self, tmp_path):
        model, rng = tiny_model()
        (ex,) = random_examples("a", ("x", "y", "z"), 1, rng)
        export_attention(ex, model, "a", tmp_path / "one.csv", "shared")
        export_attention(ex, model, "a", tmp_path / "two.csv", "shared")
        assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "two.csv").read_bytes()

    def test_mean_pool_variant_reports_uniform(self):
        model, rng = tiny_model("stl")
        (ex,) = random_examples("a", ("x", "y", "z"), 1, rng)
        heat = attention_heatmap(ex, model, "a")
        assert np.all(heat.weights == 1.0 / len(heat.tokens))

    def test_io_error_names_path(self, tmp_path):
        model, rng = tiny_model()
        (ex,) = random_examples("a", ("x", "y", "z"), 1, rng)
        bad = tmp_path / "missing" / "h.csv"
        with pytest.raises(OSError, match="missing"):
            export_attention(ex, model, "a", bad)
