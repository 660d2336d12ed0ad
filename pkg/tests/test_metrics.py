import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import confusion_oracle

from clh.backend import OracleBackend
from clh.errors import EmptyInput, MissingStage
from clh.metrics import chapter_recall, emr, micro_macro, stage_eval
from clh.pipeline import Coder, CodingRun
from clh.taxonomy import IndexEntry, parse_code_id

LABELS = [f"A{i:02d}" for i in range(15)]


def random_sets(rng: random.Random, n_notes: int, n_labels: int):
    labels = LABELS[:n_labels]
    pick = lambda: {c for c in labels if rng.random() < 0.3}  # noqa: E731
    preds = {f"n{i}": pick() for i in range(n_notes)}
    gold = {f"n{i}": pick() for i in range(n_notes)}
    return preds, gold


def check_against_oracle(preds, gold, labels=None):
    report = micro_macro({n: (preds[n], gold[n]) for n in preds}, labels)
    expected = confusion_oracle(preds, gold, labels)
    for key, value in expected.items():
        assert getattr(report, key) == pytest.approx(value, abs=1e-12), key


def test_random_sets_match_confusion_oracle():
    rng = random.Random(3)
    for _ in range(100):
        preds, gold = random_sets(rng, rng.randint(1, 20), rng.randint(1, 15))
        check_against_oracle(preds, gold)
        check_against_oracle(preds, gold, LABELS)


labels = st.sets(st.sampled_from(LABELS[:6]), max_size=6)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(labels, labels), min_size=1, max_size=12))
def test_metrics_property(pairs):
    preds = {f"n{i}": p for i, (p, _) in enumerate(pairs)}
    gold = {f"n{i}": g for i, (_, g) in enumerate(pairs)}
    check_against_oracle(preds, gold)
    report = micro_macro({n: (preds[n], gold[n]) for n in preds})
    for value in (report.micro_f1, report.macro_f1, report.emr, report.precision, report.recall):
        assert 0.0 <= value <= 1.0
    if all(preds[n] == gold[n] for n in preds):
        assert report.emr == 1.0


def test_sklearn_agrees():
    metrics = pytest.importorskip("sklearn.metrics")
    preprocessing = pytest.importorskip("sklearn.preprocessing")
    rng = random.Random(11)
    preds, gold = random_sets(rng, 20, 15)
    mlb = preprocessing.MultiLabelBinarizer(classes=LABELS)
    y_true = mlb.fit_transform([sorted(gold[n]) for n in sorted(gold)])
    y_pred = mlb.transform([sorted(preds[n]) for n in sorted(gold)])
    report = micro_macro({n: (preds[n], gold[n]) for n in preds}, LABELS)
    assert report.micro_f1 == pytest.approx(metrics.f1_score(y_true, y_pred, average="micro", zero_division=0), abs=1e-12)
    assert report.macro_f1 == pytest.approx(metrics.f1_score(y_true, y_pred, average="macro", zero_division=0), abs=1e-12)
    assert report.emr == pytest.approx(metrics.accuracy_score(y_true, y_pred), abs=1e-12)


def test_hand_computed_values():
    preds = {"a": (["I10", "A22.7"], ["I10"]), "b": ([], ["Z66"])}
    report = micro_macro(preds)
    assert (report.precision, report.recall) == (0.5, 0.5)
    assert report.micro_f1 == 0.5
    assert report.macro_f1 == pytest.approx(1 / 3)
    assert report.emr == 0.0
    assert report.per_label["A22.7"].fp == 1
    assert "Z66,0,0,1,0.0" in report.per_label_csv()


def test_order_and_duplicates_are_ignored():
    assert emr({"a": (["I10", "Z66", "I10"], ["Z66", "I10"])}) == 1.0


def test_fixed_label_universe_counts_unseen_labels():
    report = micro_macro({"a": (["I10"], ["I10"])}, ["I10", "Z66"])
    assert report.macro_f1 == 0.5
    assert report.n_labels == 2
    assert report.per_label["Z66"].tp == 0


def test_empty_inputs():
    with pytest.raises(EmptyInput):
        micro_macro({})
    with pytest.raises(EmptyInput):
        emr({})
    with pytest.raises(EmptyInput):
        stage_eval([], {})
    report = micro_macro({"a": ([], [])})
    assert (report.micro_f1, report.emr) == (0.0, 1.0)


def entry(code):
    return IndexEntry((code,), parse_code_id(code))


def fake_run(note_id, stages):
    run = CodingRun(note_id)
    run.retrieved = [[(entry(c), 1.0) for c in stages[0]]]
    run.navigator_selected = [[entry(c) for c in stages[1]]]
    run.tentative = list(stages[2])
    run.final = list(stages[3])
    return run


def test_stage_eval_cumulative_and_filtered():
    run = fake_run("a", (["I10", "Z66", "A22.7"], ["I10", "Z66"], ["I10", "Z66"], ["I10"]))
    run.chapter_groups = {"I00–I99": ["I10"], "Z00–Z99": ["Z66"]}
    gold = {"a": ["I10", "Z66", "E11.9"]}
    cumulative = stage_eval([run], gold)
    assert [cumulative[s].recall for s in (1, 2, 3, 4)] == pytest.approx([2 / 3, 2 / 3, 2 / 3, 1 / 3])
    filtered = stage_eval([run], gold, "filtered")
    assert filtered[1].recall == pytest.approx(2 / 3)
    assert filtered[2].recall == 1.0
    assert filtered[4].recall == 0.5
    with pytest.raises(MissingStage):
        stage_eval([run], gold, stages=(5,))


def test_stage_recall_is_monotone_on_oracle_runs(taxonomy, term_index, notes):
    runs = Coder(taxonomy, term_index, OracleBackend()).run_batch(notes)
    reports = stage_eval(runs, {n.id: n.gold for n in notes})
    recalls = [reports[s].recall for s in (1, 2, 3, 4)]
    assert recalls == sorted(recalls, reverse=True)
    assert reports[4].micro_f1 == pytest.approx(0.972972972972973)


def test_chapter_recall_from_gold_evidence(taxonomy, term_index, notes):
    runs = Coder(taxonomy, term_index, OracleBackend()).run_batch(notes)
    result = chapter_recall(runs, {n.id: n for n in notes}, term_index, k=25)
    assert result.skipped == 0
    assert sum(result.counts.values()) == sum(len(n.gold) for n in notes)
    for agent, expert in result.points.values():
        assert agent == expert  # the oracle agent returns the gold spans
    empty = CodingRun("n01")
    partial = chapter_recall([empty], {n.id: n for n in notes}, term_index)
    assert all(agent == 0.0 for agent, _ in partial.points.values())
    assert chapter_recall([CodingRun("unknown")], {}, term_index).skipped == 1
