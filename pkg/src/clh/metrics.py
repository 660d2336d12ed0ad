"""Set-based multi-label evaluation.

All metrics ignore code order and duplicates: predictions and gold labels
are compared as sets per note.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Literal

from clh.errors import EmptyInput, MissingStage
from clh.taxonomy import CHAPTER_LABELS, chapter_of

REPORT_SCHEMA = "clh.report/1"


@dataclass(frozen=True)
class LabelStats:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0


@dataclass
class EvalReport:
    micro_f1: float
    macro_f1: float
    emr: float
    precision: float
    recall: float
    n_notes: int
    n_labels: int
    per_label: dict[str, LabelStats] = field(default_factory=dict)
    chapter_recall: dict[str, tuple[float, float]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out = {
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "emr": self.emr,
            "precision": self.precision,
            "recall": self.recall,
            "n_notes": self.n_notes,
            "n_labels": self.n_labels,
        }
        if self.chapter_recall:
            out["chapter_recall"] = {ch: list(v) for ch, v in self.chapter_recall.items()}
        return out

    def per_label_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "tp", "fp", "fn", "f1"])
        for label in sorted(self.per_label):
            s = self.per_label[label]
            w.writerow([label, s.tp, s.fp, s.fn, repr(s.f1)])
        return buf.getvalue()


# note id -> (predicted codes, gold codes)
PredictionSet = Mapping[str, tuple[Iterable[str], Iterable[str]]]


def _as_sets(preds: PredictionSet) -> list[tuple[frozenset[str], frozenset[str]]]:
    if not preds:
        raise EmptyInput("no notes to evaluate")
    return [(frozenset(map(str, p)), frozenset(map(str, g))) for p, g in preds.values()]


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


def emr(preds: PredictionSet) -> float:
    pairs = _as_sets(preds)
    return sum(p == g for p, g in pairs) / len(pairs)


def micro_macro(preds: PredictionSet, labels: Sequence[str] | None = None) -> EvalReport:
    """Micro and macro F1, exact match ratio, micro precision and recall.

    Macro F1 averages per-label F1 over ``labels`` when given, otherwise over
    every label seen in gold or predictions.
    """
    pairs = _as_sets(preds)
    tally: dict[str, list[int]] = {}
    for pred, gold in pairs:
        for c in pred | gold:
            t = tally.setdefault(c, [0, 0, 0])
            if c in pred and c in gold:
                t[0] += 1
            elif c in pred:
                t[1] += 1
            else:
                t[2] += 1
    per_label = {c: LabelStats(*t) for c, t in tally.items()}
    tp = sum(s.tp for s in per_label.values())
    fp = sum(s.fp for s in per_label.values())
    fn = sum(s.fn for s in per_label.values())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    universe = list(labels) if labels is not None else sorted(per_label)
    macro = sum(per_label.get(c, LabelStats()).f1 for c in universe) / len(universe) if universe else 0.0
    if labels is not None:
        observed = per_label
        per_label = {c: observed.get(c, LabelStats()) for c in universe}
        per_label.update((c, s) for c, s in observed.items() if c not in per_label)
    return EvalReport(
        micro_f1=_f1(precision, recall),
        macro_f1=macro,
        emr=sum(p == g for p, g in pairs) / len(pairs),
        precision=precision,
        recall=recall,
        n_notes=len(pairs),
        n_labels=len(universe),
        per_label=per_label,
    )


def stage_eval(
    runs: Sequence[Any],
    gold: Mapping[str, Iterable[str]],
    mode: Literal["cumulative", "filtered"] = "cumulative",
    stages: Sequence[int] = (1, 2, 3, 4),
) -> dict[int, EvalReport]:
    """Score each stage's implied code set against gold.

    ``cumulative`` compares every stage with the full gold set. ``filtered``
    drops from gold whatever the previous stage had already lost, so each
    stage is only charged for its own misses.
    """
    for s in stages:
        if s not in (1, 2, 3, 4):
            raise MissingStage(f"no stage {s}")
    if not runs:
        raise EmptyInput("no runs to evaluate")
    reports = {}
    for s in stages:
        preds = {}
        for run in runs:
            g = frozenset(gold.get(run.note_id, ()))
            if mode == "filtered" and s > 1:
                g = g & run.stage_codes(s - 1)
            preds[run.note_id] = (run.stage_codes(s), g)
        reports[s] = micro_macro(preds)
    return reports


@dataclass
class ChapterRecall:
    k: int
    points: dict[str, tuple[float, float]]  # chapter -> (agent recall, evidence recall)
    counts: dict[str, int]
    skipped: int = 0


def chapter_recall(runs: Sequence[Any], notes: Mapping[str, Any], index: Any, k: int = 25) -> ChapterRecall:
    """Per-chapter recall@k of gold codes, from agent snippets vs gold evidence spans.

    Notes without evidence spans are skipped and counted.
    """
    hits: dict[str, list[int]] = {}  # chapter -> [agent found, evidence found, total]
    skipped = 0
    for run in runs:
        note = notes.get(run.note_id)
        if note is None or not note.gold_evidence or not note.gold:
            skipped += 1
            continue
        agent = set().union(*(index.retrieved_codes(q, k) for q in run.snippets)) if run.snippets else set()
        expert = set().union(*(index.retrieved_codes(q, k) for q in note.evidence_texts))
        for code in note.gold:
            h = hits.setdefault(chapter_of(code), [0, 0, 0])
            h[0] += code in agent
            h[1] += code in expert
            h[2] += 1
    points = {ch: (hits[ch][0] / hits[ch][2], hits[ch][1] / hits[ch][2]) for ch in CHAPTER_LABELS if ch in hits}
    counts = {ch: hits[ch][2] for ch in CHAPTER_LABELS if ch in hits}
    return ChapterRecall(k, points, counts, skipped)
