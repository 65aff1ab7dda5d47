import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reldesc.metrics import EvalReport, confusion_matrix, prf

PREDS = ["NULL", "A", "B"]


def test_prf_worked_example():
    p, r, f = prf(3, 1, 2)
    assert (p, r) == (0.75, 0.6)
    assert f == pytest.approx(2 / 3, abs=1e-12)


def test_report_from_predictions():
    # gold A x3 correct, one NULL predicted as A, two A predicted NULL
    gold = [1, 1, 1, 0, 1, 1, 0]
    pred = [1, 1, 1, 1, 0, 0, 0]
    rep = EvalReport.from_predictions(gold, pred, PREDS)
    assert (rep.tp, rep.fp, rep.fn) == (3, 1, 2)
    assert rep.micro_precision == 0.75 and rep.micro_recall == 0.6
    assert rep.micro_f1 == pytest.approx(0.6667, abs=1e-4)


def test_perfect():
    gold = [0, 1, 2, 2, 0]
    rep = EvalReport.from_predictions(gold, gold, PREDS)
    assert (rep.micro_precision, rep.micro_recall, rep.micro_f1) == (1.0, 1.0, 1.0)


def test_all_null_predictions():
    rep = EvalReport.from_predictions([1, 2, 0], [0, 0, 0], PREDS)
    assert (rep.micro_precision, rep.micro_recall, rep.micro_f1) == (0.0, 0.0, 0.0)
    assert rep.fn == 2


def test_wrong_predicate_counts_twice():
    rep = EvalReport.from_predictions([1], [2], PREDS)
    assert rep.per_predicate["A"] == {"tp": 0, "fp": 0, "fn": 1}
    assert rep.per_predicate["B"] == {"tp": 0, "fp": 1, "fn": 0}


def test_null_never_scored():
    rep = EvalReport.from_predictions([0, 0], [0, 0], PREDS)
    assert "NULL" not in rep.per_predicate
    assert rep.micro_f1 == 0.0


def test_text_and_dict():
    rep = EvalReport.from_predictions([1, 2, 0], [1, 0, 2], PREDS)
    assert rep.to_dict()["confusion"] == confusion_matrix([1, 2, 0], [1, 0, 2], 3).tolist()
    assert rep.to_text().splitlines()[-1].startswith("micro")


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60))
def test_counting_identities(pairs):
    gold, pred = map(list, zip(*pairs))
    rep = EvalReport.from_predictions(gold, pred, ["NULL", "A", "B", "C"])
    n_gold = sum(g != 0 for g in gold)
    n_pred = sum(p != 0 for p in pred)
    assert rep.tp + rep.fn == n_gold == rep.n_gold
    assert rep.tp + rep.fp == n_pred
    # brute-force oracle
    tp = sum(g == p != 0 for g, p in pairs)
    assert rep.tp == tp
    if n_pred and n_gold:
        assert rep.micro_precision == pytest.approx(tp / n_pred)
        assert rep.micro_recall == pytest.approx(tp / n_gold)
    assert 0.0 <= rep.micro_f1 <= 1.0
    assert np.asarray(rep.confusion).sum() == len(gold)
