"""Controlled experiments on the Assign and Verify stages.

Each note gets a candidate set made of its gold codes plus ``K`` hard
negatives per gold code, the negatives being the codes whose description
embeddings sit closest to a gold code's description. Stages 3 and 4 then run
on that set alone, which isolates them from retrieval quality.
"""

from __future__ import annotations

import copy
import csv
import io
import logging
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np

from clh.errors import EmptyGold, UnknownCode
from clh.metrics import EvalReport, micro_macro
from clh.pipeline import CONTEXT_LEVELS, ClinicalNote, Coder, Trace, group_by_chapter
from clh.retrieval import Embedder
from clh.retrieval.hnsw import TIE_DECIMALS
from clh.taxonomy import Taxonomy

logger = logging.getLogger(__name__)

Grouping = Literal["positive", "chapter"]
CURVE_COLUMNS = ("arm", "K", "micro_f1", "macro_f1", "n_notes")


@dataclass(frozen=True)
class CandidateSet:
    positives: tuple[str, ...]
    negatives: tuple[str, ...]
    k: int
    origin: dict[str, str] = field(default_factory=dict, compare=False)  # negative -> its positive
    shortfall: bool = False

    @property
    def combined(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.positives) | set(self.negatives)))

    def groups(self, grouping: Grouping = "positive") -> list[list[str]]:
        """Mutually exclusive choice sets for the validator."""
        if grouping == "chapter":
            return list(group_by_chapter(self.combined).values())
        return [sorted([p] + [n for n, o in self.origin.items() if o == p]) for p in self.positives]


class CodeCorpus:
    """Description embeddings of assignable codes, sorted by code text."""

    def __init__(self, codes: Sequence[str], descriptions: Sequence[str], embedder: Embedder) -> None:
        order = sorted(range(len(codes)), key=lambda i: codes[i])
        self.codes = [codes[i] for i in order]
        self.descriptions = [descriptions[i] for i in order]
        self.position = {c: i for i, c in enumerate(self.codes)}
        self.embedder = embedder
        self.vectors = embedder.embed_many(self.descriptions)

    @classmethod
    def from_taxonomy(cls, taxonomy: Taxonomy, embedder: Embedder) -> CodeCorpus:
        leaves = taxonomy.leaves()
        return cls([n.code for n in leaves], [n.description or n.code for n in leaves], embedder)

    def __len__(self) -> int:
        return len(self.codes)

    def neighbors(self, code: str) -> list[str]:
        """All other corpus codes, nearest first; ties by ascending code text.

        Similarities are rounded like the dense index rounds them, so exact
        ties are not split by floating point noise.
        """
        if code not in self.position:
            raise UnknownCode(f"{code} has no description embedding")
        sims = np.round(self.vectors @ self.vectors[self.position[code]], TIE_DECIMALS)
        order = np.lexsort((np.arange(len(self.codes)), -sims))  # codes are sorted, so index order is code order
        return [self.codes[i] for i in order if self.codes[i] != code]


def build_candidate_set(corpus: CodeCorpus, gold: Iterable[str], k: int) -> CandidateSet:
    """Gold codes plus ``k`` nearest non-gold neighbors per gold code.

    Neighbors claimed by an earlier gold code are skipped; the shortfall is
    topped up round-robin from each gold code's next-nearest neighbors until
    there are ``k * |gold|`` negatives or the corpus runs out.
    """
    positives = tuple(sorted(set(map(str, gold))))
    if not positives:
        raise EmptyGold("candidate set needs at least one gold code")
    if k < 0:
        raise ValueError("K must be >= 0")
    target = k * len(positives)
    pos = set(positives)
    ranked = {p: [c for c in corpus.neighbors(p) if c not in pos] for p in positives}
    origin: dict[str, str] = {}
    for p in positives:
        for c in ranked[p][:k]:
            origin.setdefault(c, p)
    cursor = dict.fromkeys(positives, k)
    while len(origin) < target:
        progressed = False
        for p in positives:
            if len(origin) >= target:
                break
            lst, i = ranked[p], cursor[p]
            while i < len(lst) and lst[i] in origin:
                i += 1
            if i < len(lst):
                origin[lst[i]] = p
                i += 1
                progressed = True
            cursor[p] = i
        if not progressed:
            break
    return CandidateSet(
        positives=positives,
        negatives=tuple(sorted(origin)),
        k=k,
        origin=origin,
        shortfall=len(origin) < target,
    )


@dataclass(frozen=True)
class AblationArm:
    context: str = "ids+descriptions"
    decoding: Literal["thinking", "constrained"] = "thinking"
    ks: tuple[int, ...] = (0, 1, 5)
    stage: Literal["validator", "reconciler"] = "validator"

    def __post_init__(self) -> None:
        if self.context not in CONTEXT_LEVELS:
            raise ValueError(f"unknown context level {self.context!r}")

    @property
    def label(self) -> str:
        return f"{self.stage}/{self.context}/{self.decoding}"


@dataclass
class CurveRow:
    arm: str
    k: int
    micro_f1: float
    macro_f1: float
    n_notes: int


@dataclass
class ExperimentResult:
    rows: list[CurveRow] = field(default_factory=list)
    reports: dict[tuple[str, int], EvalReport] = field(default_factory=dict)
    tallies: dict[str, dict[str, int]] = field(default_factory=dict)  # arm -> counter
    arms: list[dict[str, Any]] = field(default_factory=list)

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in self.rows:
            w.writerow([r.arm, r.k, repr(r.micro_f1), repr(r.macro_f1), r.n_notes])
        return buf.getvalue()

    def series(self) -> dict[str, list[tuple[int, float]]]:
        out: dict[str, list[tuple[int, float]]] = {}
        for r in self.rows:
            out.setdefault(r.arm, []).append((r.k, r.micro_f1))
        return out

    def merge(self, other: ExperimentResult) -> None:
        self.rows.extend(other.rows)
        self.reports.update(other.reports)
        for arm, t in other.tallies.items():
            self.tallies.setdefault(arm, {}).update(t)
        self.arms.extend(other.arms)


def _switch_decoding(backend, decoding: str):
    if hasattr(backend, "inner"):  # wrappers such as RecordingBackend share their state
        clone = copy.copy(backend)
        clone.inner = _switch_decoding(backend.inner, decoding)
        return clone
    clone = copy.copy(backend)
    clone.decoding = decoding
    return clone


def with_decoding(coder: Coder, decoding: str) -> Coder:
    """Shallow copy of ``coder`` whose backend uses another decoding mode."""
    if coder.backend.decoding == decoding:
        return coder
    clone = copy.copy(coder)
    clone.backend = _switch_decoding(coder.backend, decoding)
    return clone


def _bump(tally: dict[str, int], trace: Trace) -> None:
    for err in trace.errors:
        tally[err["kind"]] = tally.get(err["kind"], 0) + 1
    for w in trace.warnings:
        if w.startswith("no guideline document"):
            tally["MissingGuideline"] = tally.get("MissingGuideline", 0) + 1


def _cell(
    coder: Coder, note: ClinicalNote, cset: CandidateSet, stage: str, context: str, grouping: Grouping
) -> tuple[set[str], Trace]:
    trace = Trace()
    if stage == "validator":
        picked = {coder.assign(note, g, trace, context) for g in cset.groups(grouping)}
        return {c for c in picked if c}, trace
    return set(coder.reconcile(note, cset.combined, trace, context)), trace


def _run_arm(
    coder: Coder,
    corpus: CodeCorpus,
    notes: Sequence[ClinicalNote],
    arm: AblationArm,
    grouping: Grouping,
    workers: int,
) -> ExperimentResult:
    coder = with_decoding(coder, arm.decoding)
    notes = [n for n in notes if n.gold]
    result = ExperimentResult()
    tally: dict[str, int] = {}
    for k in arm.ks:
        sets = []
        for note in notes:
            cs = build_candidate_set(corpus, note.gold, k)
            if cs.shortfall:
                tally["Shortfall"] = tally.get("Shortfall", 0) + 1
            sets.append(cs)

        def cell(i: int):
            try:
                return _cell(coder, notes[i], sets[i], arm.stage, arm.context, grouping)
            except Exception as exc:  # one bad note must not sink the sweep
                logger.warning("note %s failed at K=%d: %s", notes[i].id, k, exc)
                t = Trace()
                t.error(arm.stage, notes[i].id, exc)
                return set(), t

        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            outputs = list(pool.map(cell, range(len(notes))))
        preds = {}
        for note, (pred, trace) in zip(notes, outputs):
            _bump(tally, trace)
            preds[note.id] = (pred, note.gold)
        if not preds:
            continue
        report = micro_macro(preds)
        result.reports[(arm.label, k)] = report
        result.rows.append(CurveRow(arm.label, k, report.micro_f1, report.macro_f1, report.n_notes))
    result.tallies[arm.label] = dict(sorted(tally.items()))
    result.arms.append(
        {"label": arm.label, "stage": arm.stage, "context": arm.context, "decoding": arm.decoding, "ks": list(arm.ks)}
    )
    return result


def candidate_scaling_run(
    coder: Coder,
    corpus: CodeCorpus,
    notes: Sequence[ClinicalNote],
    ks: Sequence[int],
    context: str = "ids+descriptions",
    grouping: Grouping = "positive",
    workers: int = 4,
) -> ExperimentResult:
    """F1 of the validator (one pick per group) and reconciler (multi-label) as K grows."""
    result = ExperimentResult()
    for stage in ("validator", "reconciler"):
        arm = AblationArm(context, coder.backend.decoding, tuple(ks), stage)
        result.merge(_run_arm(coder, corpus, notes, arm, grouping, workers))
    return result


def context_ablation_run(
    coder: Coder,
    corpus: CodeCorpus,
    notes: Sequence[ClinicalNote],
    arms: Sequence[AblationArm],
    grouping: Grouping = "positive",
    workers: int = 4,
) -> ExperimentResult:
    result = ExperimentResult()
    for arm in arms:
        result.merge(_run_arm(coder, corpus, notes, arm, grouping, workers))
    return result


def default_ablation_arms(ks: Sequence[int], decoding: str = "thinking") -> list[AblationArm]:
    return [AblationArm(level, decoding, tuple(ks)) for level in CONTEXT_LEVELS]


def decoding_mode_run(
    coder: Coder,
    corpus: CodeCorpus,
    notes: Sequence[ClinicalNote],
    ks: Sequence[int],
    context: str = "ids+descriptions",
    grouping: Grouping = "positive",
    workers: int = 4,
) -> ExperimentResult:
    """Validator F1 with and without a free reasoning phase, paired over K."""
    arms = [AblationArm(context, mode, tuple(ks)) for mode in ("thinking", "constrained")]
    return context_ablation_run(coder, corpus, notes, arms, grouping, workers)

