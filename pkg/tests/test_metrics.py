import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from histotile.metrics import (
    ConfusionMatrix,
    EmptyMatrix,
    LengthMismatch,
    compute_metrics,
    confusion,
    format_report,
)


class TestConfusion:
    def test_perfect_predictions(self):
        p = np.concatenate([np.full(60, 0.9), np.full(60, 0.1)])
        y = np.concatenate([np.ones(60), np.zeros(60)])
        cm = confusion(p, y)
        assert (cm.tp, cm.fp, cm.fn, cm.tn) == (60, 0, 0, 60)

    def test_all_positive_predictor(self):
        p = np.full(120, 0.99)
        y = np.concatenate([np.ones(60), np.zeros(60)])
        cm = confusion(p, y)
        assert (cm.tp, cm.fp, cm.fn, cm.tn) == (60, 60, 0, 0)

    def test_threshold_tie_counts_positive(self):
        cm = confusion([0.5], [0])
        assert (cm.tp, cm.fp) == (0, 1)
        cm = confusion([0.5], [1])
        assert cm.tp == 1

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            confusion([0.1, 0.2], [1])


class TestComputeMetrics:
    def test_symmetric_example(self):
        m = compute_metrics(ConfusionMatrix(tp=9, fp=1, fn=1, tn=9))
        assert m == {"accuracy": 0.9, "precision": 0.9, "recall": 0.9, "f1": 0.9}

    def test_perfect(self):
        m = compute_metrics(ConfusionMatrix(tp=60, fp=0, fn=0, tn=60))
        assert all(v == 1.0 for v in m.values())

    def test_reported_row_internally_consistent(self):
        # precision 0.968 and recall 0.99 must give F1 close to 0.979
        f1 = 2 * 0.968 * 0.99 / (0.968 + 0.99)
        assert f1 == pytest.approx(0.9789, abs=5e-4)
        assert round(f1, 3) == 0.979

    def test_zero_denominators(self):
        m = compute_metrics(ConfusionMatrix(tp=0, fp=0, fn=0, tn=4))
        assert m["precision"] == 0.0 and m["recall"] == 0.0 and m["f1"] == 0.0

    def test_empty_matrix(self):
        with pytest.raises(EmptyMatrix):
            compute_metrics(ConfusionMatrix(0, 0, 0, 0))

    @given(
        st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=200)
    )
    def test_agrees_with_bruteforce(self, pairs):
        preds = [p for p, _ in pairs]
        labels = [y for _, y in pairs]
        cm = confusion(preds, labels)
        tp = sum(1 for p, y in pairs if p >= 0.5 and y == 1)
        fp = sum(1 for p, y in pairs if p >= 0.5 and y == 0)
        fn = sum(1 for p, y in pairs if p < 0.5 and y == 1)
        tn = sum(1 for p, y in pairs if p < 0.5 and y == 0)
        assert (cm.tp, cm.fp, cm.fn, cm.tn) == (tp, fp, fn, tn)
        m = compute_metrics(cm)
        assert m["accuracy"] == pytest.approx((tp + tn) / len(pairs))
        if m["precision"] + m["recall"] > 0:
            want = 2 * m["precision"] * m["recall"] / (m["precision"] + m["recall"])
            assert m["f1"] == pytest.approx(want, rel=1e-12)

    @given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=2, max_size=50))
    def test_permutation_invariance(self, pairs):
        preds = [p for p, _ in pairs]
        labels = [y for _, y in pairs]
        a = compute_metrics(confusion(preds, labels))
        b = compute_metrics(confusion(preds[::-1], labels[::-1]))
        assert a == b


def test_report_format():
    line = format_report(ConfusionMatrix(tp=59, fp=2, fn=1, tn=58))
    fields = line.strip().split("\t")
    assert len(fields) == 8
    assert fields[0] == "0.9750"
    assert fields[4:] == ["59", "2", "1", "58"]
    assert line.endswith("\n")
