"""
Tests for confusion counts, threshold metrics, AUC and subset evaluation
"""
from pathlib import Path
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

# Add backend to path
sys.path.insert(0, str(Path(__file__).parent.parent / "backend"))

from errors import ContractError
from schemas import ModelConfig, SubsetSpec
from services.data_pipeline import DatasetSplit, Interaction, SkillVocabulary, StudentInfo, StudentSequence
from services.metrics import (
    AGGREGATE_LABEL,
    ConfusionMatrix,
    ScoredPrediction,
    accuracy,
    auc,
    confusion,
    evaluate,
    evaluate_scored,
    f1,
    precision,
    recall,
    report,
    score_sequences,
)
from services.model_registry import init_model


def _preds(probs, labels, students=None):
    students = students or ["s"] * len(probs)
    return [
        ScoredPrediction(probability=p, label=y, student_id=s, step=i, skill_id=1)
        for i, (p, y, s) in enumerate(zip(probs, labels, students))
    ]


def _brute_force_auc(probs, labels):
    pos = [p for p, y in zip(probs, labels) if y == 1]
    neg = [p for p, y in zip(probs, labels) if y == 0]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


def test_confusion_uses_inclusive_threshold():
    cm = confusion(_preds([0.5, 0.49, 0.9, 0.1], [1, 1, 0, 0]))
    assert cm == ConfusionMatrix(tp=1, fp=1, tn=1, fn=1)


def test_confusion_of_nothing_is_an_error():
    with pytest.raises(ContractError):
        confusion([])


def test_ratios_by_hand():
    cm = ConfusionMatrix(tp=6, fp=2, tn=1, fn=3)
    assert accuracy(cm).value == 7 / 12
    assert precision(cm).value == 6 / 8
    assert recall(cm).value == 6 / 9
    assert f1(cm).value == pytest.approx(2 * 0.75 * (2 / 3) / (0.75 + 2 / 3), abs=1e-15)
    assert not f1(cm).degenerate


def test_degenerate_ratios_are_zero_and_flagged():
    """No predicted positives: precision has a zero denominator"""
    cm = confusion(_preds([0.1, 0.2, 0.3], [1, 0, 1]))
    assert precision(cm).value == 0.0 and precision(cm).degenerate
    assert f1(cm).value == 0.0 and f1(cm).degenerate
    assert recall(cm).value == 0.0 and not recall(cm).degenerate


def test_perfect_and_inverted_ranking():
    assert auc(_preds([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])) == 1.0
    assert auc(_preds([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0])) == 0.0


def test_all_tied_scores_give_one_half():
    assert auc(_preds([0.7] * 6, [1, 0, 1, 0, 1, 1])) == 0.5


def test_single_class_auc_is_undefined():
    assert auc(_preds([0.2, 0.9], [1, 1])) is None
    assert auc(_preds([0.2, 0.9], [0, 0])) is None


def test_auc_ignores_threshold():
    preds = _preds([0.3, 0.4, 0.35, 0.1], [1, 1, 0, 0])
    assert report("x", preds, threshold=0.0).auc == report("x", preds, threshold=0.9).auc


@settings(max_examples=200, deadline=None)
@given(
    st.lists(
        st.tuples(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]) | st.floats(0, 1), st.integers(0, 1)),
        min_size=2,
        max_size=60,
    )
)
def test_auc_matches_pairwise_count(rows):
    """Rank statistic equals the pairwise win count, ties counting one half"""
    probs = [p for p, _ in rows]
    labels = [y for _, y in rows]
    value = auc(_preds(probs, labels))
    if len(set(labels)) < 2:
        assert value is None
    else:
        assert abs(value - _brute_force_auc(probs, labels)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=40), st.floats(0, 1))
def test_ratios_match_counting_oracle(rows, threshold):
    probs = [p for p, _ in rows]
    labels = [y for _, y in rows]
    cm = confusion(_preds(probs, labels), threshold)
    predicted = [p >= threshold for p in probs]
    tp = sum(1 for q, y in zip(predicted, labels) if q and y == 1)
    tn = sum(1 for q, y in zip(predicted, labels) if not q and y == 0)
    assert cm.tp == tp and cm.tn == tn and cm.total == len(rows)
    assert abs(accuracy(cm).value - (tp + tn) / len(rows)) <= 1e-15


GRID_ROWS = st.lists(st.tuples(st.integers(0, 100), st.integers(0, 1)), min_size=2, max_size=50)


@settings(max_examples=100, deadline=None)
@given(GRID_ROWS, st.sampled_from(["affine", "square", "sqrt", "logit"]))
def test_auc_is_invariant_under_increasing_transform(rows, transform):
    probs = [k / 100 for k, _ in rows]
    labels = [y for _, y in rows]
    mapped = {
        "affine": lambda p: 0.1 + 0.8 * p,
        "square": lambda p: p * p,
        "sqrt": lambda p: p ** 0.5,
        "logit": lambda p: 1.0 / (1.0 + np.exp(-8.0 * (p - 0.5))),
    }[transform]
    assert auc(_preds([mapped(p) for p in probs], labels)) == auc(_preds(probs, labels))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=40))
def test_accuracy_at_extreme_thresholds_is_the_class_rate(rows):
    preds = _preds([p for p, _ in rows], [y for _, y in rows])
    positives = sum(y for _, y in rows)
    assert accuracy(confusion(preds, 0.0)).value == positives / len(rows)
    assert accuracy(confusion(preds, 1.01)).value == (len(rows) - positives) / len(rows)


def test_raising_threshold_never_adds_positives():
    probs = list(np.linspace(0.0, 1.0, 21))
    labels = [i % 2 for i in range(21)]
    counts = [confusion(_preds(probs, labels), t) for t in np.linspace(0.0, 1.0, 11)]
    predicted = [c.tp + c.fp for c in counts]
    assert predicted == sorted(predicted, reverse=True)


def test_confusion_is_additive_over_partitions():
    probs = [0.1, 0.6, 0.7, 0.4, 0.9, 0.2]
    labels = [0, 1, 0, 1, 1, 0]
    whole = confusion(_preds(probs, labels))
    parts = confusion(_preds(probs[:2], labels[:2])) + confusion(_preds(probs[2:], labels[2:]))
    assert whole == parts


def test_report_marks_empty_subsets():
    row = report("CE", [])
    assert row.empty and row.n == 0 and row.auc is None


def test_report_lists_degenerate_metrics():
    row = report("CE", _preds([0.9, 0.8], [1, 1]))
    assert row.accuracy == 1.0
    assert "auc" in row.degenerate
    assert row.positives == 2 and row.negatives == 0


METADATA = {
    "a": StudentInfo("COE", "CE"),
    "b": StudentInfo("COE", "EE"),
    "c": StudentInfo("COAS", "BIO"),
}


def test_evaluate_scored_groups_by_department_and_appends_aggregate():
    preds = _preds([0.9, 0.2, 0.6, 0.4, 0.7], [1, 0, 1, 0, 0], ["a", "a", "b", "b", "c"])
    subsets = [SubsetSpec(label="CE", departments=["CE"]), SubsetSpec(label="EE", departments=["EE"])]
    rows = evaluate_scored(preds, subsets, METADATA)
    assert [r.label for r in rows] == ["CE", "EE", AGGREGATE_LABEL]
    assert [r.n for r in rows] == [2, 2, 5]
    assert [r.aggregate for r in rows] == [False, False, True]
    assert rows[0].confusion + rows[1].confusion + confusion(preds[4:]) == rows[2].confusion


def test_evaluate_scored_with_explicit_everyone_subset():
    preds = _preds([0.9, 0.2], [1, 0], ["a", "c"])
    rows = evaluate_scored(preds, [SubsetSpec(label="Everyone")], METADATA)
    assert [r.label for r in rows] == ["Everyone"]
    assert rows[0].aggregate


def test_department_subset_without_metadata():
    with pytest.raises(ContractError):
        evaluate_scored(_preds([0.5], [1]), [SubsetSpec(label="CE", departments=["CE"])], None)


def test_department_with_no_students_is_empty():
    rows = evaluate_scored(_preds([0.5, 0.4], [1, 0], ["a", "a"]), [SubsetSpec(label="ME", departments=["ME"])], METADATA)
    assert rows[0].empty
    assert rows[1].n == 2


def test_students_without_metadata_are_counted_on_department_rows(caplog):
    preds = _preds([0.9, 0.2, 0.6, 0.4], [1, 0, 1, 0], ["a", "b", "zz", "zz"])
    subsets = [SubsetSpec(label="CE", departments=["CE"]), SubsetSpec(label="EE", departments=["EE"])]
    with caplog.at_level("WARNING"):
        rows = evaluate_scored(preds, subsets, METADATA)
    assert [r.excluded_students for r in rows] == [1, 1, 0]
    assert rows[-1].n == 4
    assert "Excluded 1 test students without metadata" in caplog.text


def test_no_exclusions_when_every_student_has_metadata():
    rows = evaluate_scored(_preds([0.9, 0.2], [1, 0], ["a", "b"]), [SubsetSpec(label="CE", departments=["CE"])], METADATA)
    assert all(r.excluded_students == 0 for r in rows)


def _split():
    def seq(uid, n):
        return StudentSequence(uid, tuple(Interaction(1 + i % 3, int((i * 7) % 3 != 0), 2023) for i in range(n)))

    return DatasetSplit(
        train=[],
        test=[seq("a", 5), seq("b", 1), seq("c", 12)],
        vocabulary=SkillVocabulary([("ACCT", 1000), ("ACCT", 2000), ("ACCT", 3000)]),
    )


def test_scored_targets_exclude_first_window_position():
    """n equals the valid next-step targets after windowing"""
    state = init_model("dkt", 3, ModelConfig(hidden_size=4), 0)
    scored = score_sequences(state, _split().test, max_len=5)
    # a: 5 -> 4; b: 1 -> unusable; c: 5 + 5 + 2 -> 4 + 4 + 1
    assert len(scored) == 4 + 9
    assert all(p.step >= 1 for p in scored)


def test_evaluate_end_to_end():
    state = init_model("kqn", 3, ModelConfig(kqn_dim=4), 0)
    rows = evaluate(state, _split(), [SubsetSpec(label="All students")], max_len=5)
    assert len(rows) == 1
    assert rows[0].n == 13
    assert 0.0 <= rows[0].accuracy <= 1.0
