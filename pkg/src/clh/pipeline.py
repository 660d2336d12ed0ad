"""The four coding stages: Analyze, Locate, Assign, Verify.

Per note the stages run in sequence. Inside a stage the independent items
(snippets for Locate, chapter groups for Assign) fan out over a thread pool;
results are merged back in item order so the trace never depends on which
thread finished first.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Any, Literal

from clh.backend import (
    Backend,
    GenerationRequest,
    PromptTemplate,
    extract_strings,
    generate,
    id_constraint,
    load_templates,
    parse_ids,
    render,
)
from clh.errors import ClhError, InvalidRecord, MalformedCode, NoAnswerTag, NoIntegers, UnknownCode, UnparseableResponse
from clh.retrieval import TermIndex
from clh.taxonomy import CHAPTER_LABELS, CodeId, IndexEntry, Taxonomy, chapter_of, parse_code_id

logger = logging.getLogger(__name__)

RUN_SCHEMA = "clh.run/1"
STAGES = ("analyze", "locate", "assign", "verify")
ContextLevel = Literal["ids_only", "ids+descriptions", "ids+descriptions+guidelines"]
CONTEXT_LEVELS: tuple[str, ...] = ("ids_only", "ids+descriptions", "ids+descriptions+guidelines")

_PARSE_ERRORS = (NoAnswerTag, NoIntegers, UnparseableResponse)


@dataclass
class ClinicalNote:
    id: str
    text: str
    doc_type: str = ""
    gold: frozenset[str] | None = None
    gold_evidence: list[tuple[str, tuple[int, int]]] | None = None

    def __post_init__(self) -> None:
        if self.gold is not None:
            self.gold = frozenset(parse_code_id(c).text for c in self.gold)
        for code, (start, end) in self.gold_evidence or []:
            parse_code_id(code)
            if not 0 <= start < end <= len(self.text):
                raise InvalidRecord(f"note {self.id}: span {start}-{end} outside text of length {len(self.text)}")

    @property
    def evidence_texts(self) -> list[str]:
        return list(dict.fromkeys(self.text[s:e] for _, (s, e) in self.gold_evidence or []))

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> ClinicalNote:
        try:
            evidence = rec.get("gold_evidence")
            if evidence is not None:
                evidence = [(e["code"], (int(e["span"][0]), int(e["span"][1]))) for e in evidence]
            gold = rec.get("gold")
            return cls(
                id=str(rec["id"]),
                text=rec["text"],
                doc_type=rec.get("doc_type", ""),
                gold=frozenset(gold) if gold is not None else None,
                gold_evidence=evidence,
            )
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            if isinstance(exc, MalformedCode):
                raise
            raise InvalidRecord(f"bad note record: {exc!r}") from exc

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {"id": self.id, "text": self.text, "doc_type": self.doc_type}
        if self.gold is not None:
            rec["gold"] = sorted(self.gold)
        if self.gold_evidence is not None:
            rec["gold_evidence"] = [{"code": c, "span": [s, e]} for c, (s, e) in self.gold_evidence]
        return rec


@dataclass
class Call:
    stage: str
    key: str
    prompt: str
    response: str | None

    def to_dict(self) -> dict[str, Any]:
        return {"stage": self.stage, "key": self.key, "prompt": self.prompt, "response": self.response}


@dataclass
class CodingRun:
    note_id: str
    snippets: list[str] = field(default_factory=list)
    retrieved: list[list[tuple[IndexEntry, float]]] = field(default_factory=list)
    navigator_selected: list[list[IndexEntry]] = field(default_factory=list)
    chapter_groups: dict[str, list[str]] = field(default_factory=dict)
    tentative: list[str] = field(default_factory=list)
    final: list[str] = field(default_factory=list)
    calls: list[Call] = field(default_factory=list)
    call_counts: dict[str, int] = field(default_factory=lambda: dict.fromkeys(STAGES, 0))
    errors: list[dict[str, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    history: list[list[str]] = field(default_factory=list)  # finals of earlier refinement passes
    timings: dict[str, float] = field(default_factory=dict)

    def stage_codes(self, stage: int) -> set[str]:
        """Code set implied by the output of stage 1..4."""
        if stage == 1:
            return {e.code.text for hits in self.retrieved for e, _ in hits}
        if stage == 2:
            return {e.code.text for sel in self.navigator_selected for e in sel}
        if stage == 3:
            return set(self.tentative)
        if stage == 4:
            return set(self.final)
        raise ValueError(f"no stage {stage}")

    def to_record(self, manifest: str | None = None, timings: bool = False) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "schema": RUN_SCHEMA,
            "note_id": self.note_id,
            "snippets": self.snippets,
            "retrieved": [
                [{"term": e.display, "term_path": list(e.term_path), "code": e.code.text, "score": s} for e, s in hits]
                for hits in self.retrieved
            ],
            "navigator_selected": [
                [{"term_path": list(e.term_path), "code": e.code.text} for e in sel] for sel in self.navigator_selected
            ],
            "chapter_groups": self.chapter_groups,
            "tentative": self.tentative,
            "final": self.final,
            "calls": [c.to_dict() for c in self.calls],
            "call_counts": self.call_counts,
            "errors": self.errors,
            "warnings": self.warnings,
            "history": self.history,
        }
        if manifest is not None:
            rec["manifest"] = manifest
        if timings:
            rec["timings"] = self.timings
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> CodingRun:
        if rec.get("schema") != RUN_SCHEMA:
            raise InvalidRecord(f"not a {RUN_SCHEMA} record")

        def entry(d: dict[str, Any]) -> IndexEntry:
            return IndexEntry(tuple(d["term_path"]), parse_code_id(d["code"]))

        return cls(
            note_id=rec["note_id"],
            snippets=list(rec["snippets"]),
            retrieved=[[(entry(h), float(h["score"])) for h in hits] for hits in rec["retrieved"]],
            navigator_selected=[[entry(d) for d in sel] for sel in rec["navigator_selected"]],
            chapter_groups={k: list(v) for k, v in rec["chapter_groups"].items()},
            tentative=list(rec["tentative"]),
            final=list(rec["final"]),
            calls=[Call(**c) for c in rec.get("calls", [])],
            call_counts=dict(rec.get("call_counts", {})),
            errors=list(rec.get("errors", [])),
            warnings=list(rec.get("warnings", [])),
            history=[list(h) for h in rec.get("history", [])],
            timings=dict(rec.get("timings", {})),
        )


@dataclass
class PipelineConfig:
    k: int = 10
    retrieval_mode: str | None = None  # None: the index default
    passes: int = 1
    stage_timeout: float | None = None  # seconds per stage per note
    max_workers: int = 8
    parse_retries: int = 1
    context: ContextLevel = "ids+descriptions+guidelines"
    use_gold_evidence: bool = False
    dedup_snippets: bool = True


def group_by_chapter(candidates: Iterable[CodeId | str]) -> dict[str, list[str]]:
    """Partition codes by chapter; chapters in table order, codes ascending."""
    groups: dict[str, set[str]] = {}
    for c in candidates:
        text = str(c)
        groups.setdefault(chapter_of(text), set()).add(text)
    return {ch: sorted(groups[ch]) for ch in CHAPTER_LABELS if ch in groups}


class Trace:
    """Per-item scratch space merged into the run afterwards."""

    def __init__(self) -> None:
        self.calls: list[Call] = []
        self.count = 0
        self.errors: list[dict[str, str]] = []
        self.warnings: list[str] = []

    def error(self, stage: str, key: str, exc: BaseException) -> None:
        self.errors.append({"stage": stage, "key": key, "kind": type(exc).__name__, "message": str(exc)})

    def merge_into(self, run: CodingRun, stage: str) -> None:
        run.calls.extend(self.calls)
        run.call_counts[stage] = run.call_counts.get(stage, 0) + self.count
        run.errors.extend(self.errors)
        run.warnings.extend(self.warnings)


class Coder:
    """Runs the four stages against one taxonomy, term index and backend."""

    def __init__(
        self,
        taxonomy: Taxonomy,
        index: TermIndex,
        backend: Backend,
        config: PipelineConfig | None = None,
        templates: dict[str, PromptTemplate] | None = None,
    ) -> None:
        self.taxonomy = taxonomy
        self.index = index
        self.backend = backend
        self.config = config or PipelineConfig()
        self.templates = templates or load_templates()

    @property
    def thinking(self) -> bool:
        return self.backend.decoding == "thinking"

    # model calls

    def _ask(self, trace: Trace, stage: str, key: str, request: GenerationRequest, parse: Callable[[Any], Any]):
        """Generate and parse, retrying on malformed output.

        Returns ``None`` once ``parse_retries`` extra attempts are used up; the
        caller then treats the selection as empty.
        """
        last: Exception | None = None
        for _ in range(self.config.parse_retries + 1):
            trace.count += 1
            try:
                result = generate(self.backend, request)
            except UnparseableResponse as exc:
                trace.calls.append(Call(stage, key, request.prompt, None))
                last = exc
                continue
            trace.calls.append(Call(stage, key, request.prompt, result.raw))
            try:
                return parse(result)
            except _PARSE_ERRORS as exc:
                last = exc
        trace.error(stage, key, last)
        return None

    def _select(self, trace: Trace, stage: str, key: str, request: GenerationRequest) -> list[int]:
        parsed = self._ask(trace, stage, key, request, lambda r: parse_ids(r, len(request.choices)))
        if parsed is None:
            return []
        ids, dropped = parsed
        if dropped:
            trace.warnings.append(f"{stage}/{key}: dropped {dropped} out-of-range id(s)")
        return ids

    def _constraint(self, n: int, multi: bool) -> str | None:
        return None if self.thinking else id_constraint(n, multi)

    def format_candidates(self, codes: Sequence[str], context: str | None = None) -> list[str]:
        context = context or self.config.context
        if context == "ids_only":
            return list(codes)
        return [f"{c} {self.taxonomy.description(c)}".rstrip() for c in codes]

    def guideline_text(self, codes: Iterable[str], trace: Trace | None = None, context: str | None = None) -> str:
        context = context or self.config.context
        if context != "ids+descriptions+guidelines":
            return ""
        missing: list[str] = []
        docs = self.taxonomy.guidelines_for(list(codes), missing)
        if trace is not None:
            trace.warnings.extend(f"no guideline document for {ch}" for ch in missing)
        return "\n\n".join(d.text for d in docs)

    # stage 1

    def analyze(self, note: ClinicalNote, trace: Trace | None = None) -> list[str]:
        if not note.text:
            raise ValueError(f"note {note.id} has empty text")
        trace = trace or Trace()
        if self.config.use_gold_evidence:
            snippets = note.evidence_texts
        else:
            prompt = render(self.templates["evidence"], {"note": note.text}, self.thinking)
            request = GenerationRequest(
                "evidence", prompt, gold=note.gold or frozenset(), evidence=tuple(note.evidence_texts)
            )
            snippets = self._ask(trace, "analyze", note.id, request, extract_strings) or []
        if self.config.dedup_snippets:
            snippets = list(dict.fromkeys(snippets))
        return snippets

    # stage 2

    def locate_step(
        self, note: ClinicalNote, snippet: str, trace: Trace, k: int | None = None
    ) -> tuple[list[tuple[IndexEntry, float]], list[IndexEntry]]:
        hits = self.index.retrieve_terms(snippet, k or self.config.k, self.config.retrieval_mode)
        if not hits:
            return hits, []
        terms = [e.display for e, _ in hits]
        prompt = render(self.templates["navigator"], {"terms": terms, "query": snippet}, self.thinking)
        request = GenerationRequest(
            "navigator",
            prompt,
            constraint=self._constraint(len(hits), multi=True),
            choices=tuple(e.code.text for e, _ in hits),
            multi=True,
            gold=note.gold or frozenset(),
        )
        ids = self._select(trace, "locate", snippet, request)
        return hits, [hits[i - 1][0] for i in ids]

    def locate(self, note: ClinicalNote, snippet: str, k: int | None = None) -> list[IndexEntry]:
        return self.locate_step(note, snippet, Trace(), k)[1]

    # stage 3

    def assign(
        self, note: ClinicalNote, group: Sequence[str], trace: Trace | None = None, context: str | None = None
    ) -> str | None:
        """Pick at most one code of ``group`` with the validator prompt."""
        if not group:
            raise ValueError("assign needs a non-empty candidate group")
        trace = trace or Trace()
        prompt = render(
            self.templates["validator"],
            {
                "note": note.text,
                "guidelines": self.guideline_text(group, trace, context),
                "codes": self.format_candidates(group, context),
            },
            self.thinking,
        )
        request = GenerationRequest(
            "validator",
            prompt,
            constraint=self._constraint(len(group), multi=False),
            choices=tuple(group),
            multi=False,
            gold=note.gold or frozenset(),
        )
        ids = self._select(trace, "assign", chapter_of(group[0]), request)
        if len(ids) > 1:
            trace.warnings.append(f"assign/{chapter_of(group[0])}: {len(ids)} ids for a single choice, kept the first")
        return group[ids[0] - 1] if ids else None

    # stage 4

    def reconcile(
        self, note: ClinicalNote, tentative: Iterable[str], trace: Trace | None = None, context: str | None = None
    ) -> list[str]:
        codes = sorted(set(tentative))
        if not codes:
            return []
        trace = trace or Trace()
        blocks = []
        for code in codes:
            try:
                notes = self.taxonomy.instructional_notes_for(code)
            except UnknownCode:
                trace.warnings.append(f"verify: {code} not in hierarchy, no instructional notes")
                continue
            if not notes.is_empty():
                blocks.append(f"{code}:\n{notes.render()}")
        prompt = render(
            self.templates["reconciler"],
            {
                "note": note.text,
                "guidelines": self.guideline_text(codes, trace, context),
                "instructional_notes": "\n\n".join(blocks),
                "codes": self.format_candidates(codes, context),
            },
            self.thinking,
        )
        request = GenerationRequest(
            "reconciler",
            prompt,
            constraint=self._constraint(len(codes), multi=True),
            choices=tuple(codes),
            multi=True,
            gold=note.gold or frozenset(),
        )
        ids = self._select(trace, "verify", note.id, request)
        return [codes[i - 1] for i in ids]

    # orchestration

    def _fan_out(self, fn: Callable[[Any, Trace], Any], items: Sequence[Any], run: CodingRun, stage: str):
        """Apply ``fn`` to every item concurrently under the stage timeout.

        Returns per-item results (``None`` for failed items), or ``None`` for
        the whole stage when the timeout expired.
        """
        traces = [Trace() for _ in items]

        def guarded(i: int):
            try:
                return fn(items[i], traces[i])
            except ClhError as exc:
                traces[i].error(stage, str(items[i])[:80], exc)
                return None

        if not items:
            return []
        pool = ThreadPoolExecutor(max_workers=max(1, min(self.config.max_workers, len(items))))
        try:
            futures = [pool.submit(guarded, i) for i in range(len(items))]
            done, pending = wait(futures, timeout=self.config.stage_timeout)
        finally:
            pool.shutdown(wait=False, cancel_futures=True)
        if pending:
            run.errors.append(
                {
                    "stage": stage,
                    "key": run.note_id,
                    "kind": "StageTimeout",
                    "message": f"{len(pending)} of {len(items)} items unfinished after {self.config.stage_timeout}s",
                }
            )
            return None
        for t in traces:
            t.merge_into(run, stage)
        return [f.result() for f in futures]

    def _single_pass(self, note: ClinicalNote) -> CodingRun:
        run = CodingRun(note_id=note.id)
        clock = time.perf_counter()

        res = self._fan_out(lambda n, tr: self.analyze(n, tr), [note], run, "analyze")
        run.snippets = (res[0] or []) if res else []
        run.timings["analyze"] = time.perf_counter() - clock

        clock = time.perf_counter()
        res = self._fan_out(lambda s, tr: self.locate_step(note, s, tr), run.snippets, run, "locate")
        if res is None:
            res = [None] * len(run.snippets)
        run.retrieved = [r[0] if r else [] for r in res]
        run.navigator_selected = [r[1] if r else [] for r in res]
        run.timings["locate"] = time.perf_counter() - clock

        clock = time.perf_counter()
        run.chapter_groups = group_by_chapter(run.stage_codes(2))
        groups = list(run.chapter_groups.values())
        res = self._fan_out(lambda g, tr: self.assign(note, g, tr), groups, run, "assign") or []
        run.tentative = sorted({c for c in res if c})
        for code in run.tentative:
            if code in self.taxonomy and not self.taxonomy.most_specific(code):
                run.warnings.append(f"assign: {code} is not the most specific code")
        run.timings["assign"] = time.perf_counter() - clock

        clock = time.perf_counter()
        if run.tentative:
            res = self._fan_out(lambda n, tr: self.reconcile(n, run.tentative, tr), [note], run, "verify")
            run.final = (res[0] or []) if res else []
        run.timings["verify"] = time.perf_counter() - clock
        return run

    def run(self, note: ClinicalNote) -> CodingRun:
        """Code one note, with optional self-refinement passes.

        Each extra pass appends the previous pass's codes to the note text as a
        scratchpad and runs all four stages again; the last pass is returned.
        """
        history: list[list[str]] = []
        current = note
        run = None
        for p in range(max(1, self.config.passes)):
            if p:
                pad = f"\n\n[Codes proposed in pass {p}]: {', '.join(run.final) or 'none'}"
                current = ClinicalNote(note.id, note.text + pad, note.doc_type, note.gold, note.gold_evidence)
                history.append(list(run.final))
            run = self._single_pass(current)
        run.history = history
        return run

    def run_batch(self, notes: Sequence[ClinicalNote], workers: int = 1) -> list[CodingRun]:
        if workers <= 1:
            return [self.run(n) for n in notes]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(self.run, notes))


def run_pipeline(note: ClinicalNote, coder: Coder) -> CodingRun:
    return coder.run(note)
