"""ICD-10-CM resources: tabular hierarchy, alphabetical index and chapter guidelines.

Everything here is loaded from canonical JSONL fixtures (one object per line):

* ``tabular.jsonl``     ``{"code", "description", "parent", "notes"}``
* ``alpha_index.jsonl`` ``{"term_path": [...], "code"}``
* ``guidelines.jsonl``  ``{"chapter", "text"}``

A :class:`Taxonomy` is built once and treated as read-only afterwards, so all
query methods are safe to call from many threads.
"""

from __future__ import annotations

import bisect
import logging
import re
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from typing import IO, Any

from clh.errors import (
    DuplicateChapter,
    DuplicateCode,
    InvalidRecord,
    MalformedCode,
    OrphanNode,
    PrefixViolation,
    UnknownChapter,
    UnknownCode,
)
from clh.io import iter_jsonl

logger = logging.getLogger(__name__)

DASH = "–"

# (first category, last category, title); ordered by first category.
CHAPTERS: tuple[tuple[str, str, str], ...] = (
    ("A00", "B99", "Certain infectious and parasitic diseases"),
    ("C00", "D49", "Neoplasms"),
    ("D50", "D89", "Diseases of the blood and blood-forming organs and certain disorders involving the immune mechanism"),
    ("E00", "E89", "Endocrine, nutritional and metabolic diseases"),
    ("F01", "F99", "Mental, behavioral and neurodevelopmental disorders"),
    ("G00", "G99", "Diseases of the nervous system"),
    ("H00", "H59", "Diseases of the eye and adnexa"),
    ("H60", "H95", "Diseases of the ear and mastoid process"),
    ("I00", "I99", "Diseases of the circulatory system"),
    ("J00", "J99", "Diseases of the respiratory system"),
    ("K00", "K95", "Diseases of the digestive system"),
    ("L00", "L99", "Diseases of the skin and subcutaneous tissue"),
    ("M00", "M99", "Diseases of the musculoskeletal system and connective tissue"),
    ("N00", "N99", "Diseases of the genitourinary system"),
    ("O00", "O9A", "Pregnancy, childbirth and the puerperium"),
    ("P00", "P96", "Certain conditions originating in the perinatal period"),
    ("Q00", "Q99", "Congenital malformations, deformations and chromosomal abnormalities"),
    ("R00", "R99", "Symptoms, signs and abnormal clinical and laboratory findings, not elsewhere classified"),
    ("S00", "T88", "Injury, poisoning and certain other consequences of external causes"),
    ("U00", "U85", "Codes for special purposes"),
    ("V00", "Y99", "External causes of morbidity"),
    ("Z00", "Z99", "Factors influencing health status and contact with health services"),
)

CHAPTER_LABELS: tuple[str, ...] = tuple(f"{lo}{DASH}{hi}" for lo, hi, _ in CHAPTERS)
_CHAPTER_STARTS = [lo for lo, _, _ in CHAPTERS]

CODE_RE = re.compile(r"^[A-Z][0-9A-Z]{2}(?:\.[0-9A-Z]{1,4})?$")
BLOCK_RE = re.compile(r"^([A-Z][0-9A-Z]{2})[–-]([A-Z][0-9A-Z]{2})$")

NOTE_KINDS = ("includes", "excludes1", "excludes2", "code_first", "use_additional")


def chapter_of(code: str) -> str:
    """Chapter label for a code, category or block label.

    Raises:
        UnknownChapter: the category falls in no chapter range (e.g. ``"E95"``).
    """
    m = BLOCK_RE.match(code)
    category = m.group(1) if m else code[:3]
    i = bisect.bisect_right(_CHAPTER_STARTS, category) - 1
    if i < 0 or category > CHAPTERS[i][1]:
        raise UnknownChapter(f"no chapter covers category {category!r}")
    return CHAPTER_LABELS[i]


def chapter_index(label: str) -> int:
    return CHAPTER_LABELS.index(normalize_block(label))


def normalize_block(label: str) -> str:
    m = BLOCK_RE.match(label)
    if not m:
        raise MalformedCode(f"not a block label: {label!r}")
    return f"{m.group(1)}{DASH}{m.group(2)}"


def is_block(text: str) -> bool:
    return BLOCK_RE.match(text) is not None


@dataclass(frozen=True, order=True)
class CodeId:
    """A validated ICD-10-CM code.

    ``is_leaf`` is ``None`` until the code has been looked up in a hierarchy.
    """

    text: str
    chapter: str = field(compare=False)
    category: str = field(compare=False)
    is_leaf: bool | None = field(default=None, compare=False)

    def __str__(self) -> str:
        return self.text

    @property
    def compact(self) -> str:
        return self.text.replace(".", "")


def parse_code_id(text: str) -> CodeId:
    """Validate ``text`` and derive its category and chapter.

    >>> parse_code_id("A22.7").chapter == "A00–B99"
    True
    """
    if not isinstance(text, str) or not CODE_RE.match(text):
        raise MalformedCode(f"malformed ICD-10-CM code: {text!r}")
    category = text[:3]
    return CodeId(text=text, chapter=chapter_of(category), category=category)


@dataclass
class InstructionalNotes:
    includes: list[str] = field(default_factory=list)
    excludes1: list[str] = field(default_factory=list)
    excludes2: list[str] = field(default_factory=list)
    code_first: list[str] = field(default_factory=list)
    use_additional: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        for kind in NOTE_KINDS:
            setattr(self, kind, _dedup(getattr(self, kind)))

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> InstructionalNotes:
        data = data or {}
        unknown = set(data) - set(NOTE_KINDS)
        if unknown:
            raise InvalidRecord(f"unknown note kinds: {sorted(unknown)}")
        kwargs = {}
        for kind, values in data.items():
            if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
                raise InvalidRecord(f"notes.{kind} must be a list of strings")
            kwargs[kind] = list(values)
        return cls(**kwargs)

    def to_dict(self) -> dict[str, list[str]]:
        """Only non-empty lists are emitted (canonical fixture form)."""
        return {k: list(getattr(self, k)) for k in NOTE_KINDS if getattr(self, k)}

    def is_empty(self) -> bool:
        return not any(getattr(self, k) for k in NOTE_KINDS)

    def merged(self, other: InstructionalNotes) -> InstructionalNotes:
        """``self`` first, then entries of ``other`` not already present."""
        return InstructionalNotes(**{k: getattr(self, k) + getattr(other, k) for k in NOTE_KINDS})

    def render(self) -> str:
        labels = {
            "includes": "Includes",
            "excludes1": "Excludes1",
            "excludes2": "Excludes2",
            "code_first": "Code first",
            "use_additional": "Use additional code",
        }
        lines = []
        for kind in NOTE_KINDS:
            for value in getattr(self, kind):
                lines.append(f"{labels[kind]}: {value}")
        return "\n".join(lines)


def _dedup(values: Iterable[str]) -> list[str]:
    seen: set[str] = set()
    out = []
    for v in values:
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


@dataclass(eq=False)
class TabularNode:
    code: str  # code text or block label
    description: str
    notes: InstructionalNotes = field(default_factory=InstructionalNotes)
    parent: TabularNode | None = field(default=None, repr=False)
    children: list[TabularNode] = field(default_factory=list, repr=False)

    @property
    def is_block(self) -> bool:
        return is_block(self.code)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def code_id(self) -> CodeId:
        if self.is_block:
            raise MalformedCode(f"{self.code} is a block label, not a code")
        cid = parse_code_id(self.code)
        return CodeId(cid.text, cid.chapter, cid.category, is_leaf=self.is_leaf)

    def ancestors(self) -> Iterator[TabularNode]:
        node = self.parent
        while node is not None:
            yield node
            node = node.parent

    def to_record(self) -> dict[str, Any]:
        return {
            "code": self.code,
            "description": self.description,
            "parent": self.parent.code if self.parent else None,
            "notes": self.notes.to_dict(),
        }


@dataclass(frozen=True)
class IndexEntry:
    term_path: tuple[str, ...]
    code: CodeId

    def __post_init__(self) -> None:
        if not self.term_path or not all(isinstance(t, str) and t.strip() for t in self.term_path):
            raise InvalidRecord("term_path must be a non-empty list of non-empty strings")

    @property
    def display(self) -> str:
        return ", ".join(self.term_path)

    def to_record(self) -> dict[str, Any]:
        return {"term_path": list(self.term_path), "code": self.code.text}


@dataclass(frozen=True)
class GuidelineDoc:
    chapter: str
    text: str


def _check_extends(parent: str, child: str) -> None:
    if child == parent:
        raise PrefixViolation(f"{child} lists itself as parent")
    if is_block(parent):
        lo, hi = BLOCK_RE.match(parent).groups()
        if is_block(child):
            clo, chi = BLOCK_RE.match(child).groups()
        else:
            clo = chi = child[:3]
        if not (lo <= clo and chi <= hi):
            raise PrefixViolation(f"{child} lies outside block {parent}")
        return
    if is_block(child):
        raise PrefixViolation(f"block {child} cannot sit under code {parent}")
    p, c = parent.replace(".", ""), child.replace(".", "")
    if not (c.startswith(p) and len(c) > len(p)):
        raise PrefixViolation(f"{child} does not extend parent {parent}")


class Taxonomy:
    """The tabular hierarchy plus (optionally) alphabetical index and guidelines."""

    def __init__(
        self,
        roots: list[TabularNode] | None = None,
        alpha_index: list[IndexEntry] | None = None,
        guidelines: dict[str, GuidelineDoc] | None = None,
    ) -> None:
        self.roots: list[TabularNode] = roots or []
        self.nodes: dict[str, TabularNode] = {}
        for node in self.iter_nodes():
            self.nodes[node.code] = node
        self.alpha_index: list[IndexEntry] = alpha_index or []
        self.guidelines: dict[str, GuidelineDoc] = guidelines or {}

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, code: object) -> bool:
        return str(code) in self.nodes

    def iter_nodes(self) -> Iterator[TabularNode]:
        """Depth-first preorder over all nodes."""
        stack = list(reversed(self.roots))
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def node(self, code: CodeId | str) -> TabularNode:
        key = str(code)
        try:
            return self.nodes[key]
        except KeyError:
            raise UnknownCode(f"{key} is not in the hierarchy") from None

    def lookup(self, code: CodeId | str) -> CodeId:
        """CodeId with ``is_leaf`` filled in from the hierarchy."""
        return self.node(code).code_id

    def description(self, code: CodeId | str) -> str:
        node = self.nodes.get(str(code))
        return node.description if node else ""

    def instructional_notes_for(self, code: CodeId | str) -> InstructionalNotes:
        """Notes of the node and all its ancestors, nearest first, deduplicated."""
        node = self.node(code)
        notes = InstructionalNotes(**node.notes.to_dict())
        for anc in node.ancestors():
            notes = notes.merged(anc.notes)
        return notes

    def most_specific(self, code: CodeId | str) -> bool:
        node = self.node(code)
        return not node.is_block and node.is_leaf

    def leaves(self) -> list[TabularNode]:
        return [n for n in self.iter_nodes() if not n.is_block and n.is_leaf]

    def guidelines_for(
        self, candidates: Iterable[CodeId | str], missing: list[str] | None = None
    ) -> list[GuidelineDoc]:
        """Guideline docs for the distinct chapters of ``candidates``, in chapter order.

        Chapters without a document are appended to ``missing`` (when given) and
        logged; they never raise.
        """
        chapters = {c.chapter if isinstance(c, CodeId) else chapter_of(c) for c in candidates}
        docs = []
        for label in sorted(chapters, key=chapter_index):
            doc = self.guidelines.get(label)
            if doc is None:
                logger.info("no guideline document for chapter %s", label)
                if missing is not None:
                    missing.append(label)
                continue
            docs.append(doc)
        return docs

    def tabular_records(self) -> list[dict[str, Any]]:
        return [n.to_record() for n in self.iter_nodes()]


def load_tabular(stream: IO[bytes] | IO[str] | Iterable[str]) -> Taxonomy:
    """Build a hierarchy from canonical tabular records.

    Records may come in any order; parents are resolved after the whole
    stream has been read.
    """
    nodes: dict[str, TabularNode] = {}
    parents: dict[str, str | None] = {}
    order: list[str] = []
    for lineno, rec in iter_jsonl(stream):
        try:
            code = rec["code"]
            description = rec.get("description", "")
            parent = rec.get("parent")
            notes = InstructionalNotes.from_dict(rec.get("notes"))
        except (KeyError, TypeError, AttributeError) as exc:
            raise InvalidRecord(f"line {lineno}: bad tabular record ({exc})") from exc
        except InvalidRecord as exc:
            raise InvalidRecord(f"line {lineno}: {exc}") from exc
        if not isinstance(code, str):
            raise InvalidRecord(f"line {lineno}: code must be a string")
        try:
            if is_block(code):
                code = normalize_block(code)
                chapter_of(code)
            else:
                parse_code_id(code)
            if isinstance(parent, str) and is_block(parent):
                parent = normalize_block(parent)
        except (MalformedCode, UnknownChapter) as exc:
            raise type(exc)(f"line {lineno}: {exc}") from exc
        if code in nodes:
            raise DuplicateCode(f"line {lineno}: duplicate code {code}")
        nodes[code] = TabularNode(code=code, description=description, notes=notes)
        parents[code] = parent
        order.append(code)

    roots = []
    for code in order:
        parent = parents[code]
        node = nodes[code]
        if parent is None:
            roots.append(node)
            continue
        if parent not in nodes:
            raise OrphanNode(f"{code} references missing parent {parent}")
        _check_extends(parent, code)
        node.parent = nodes[parent]
        nodes[parent].children.append(node)
    return Taxonomy(roots)


def load_alpha_index(stream: IO[bytes] | IO[str] | Iterable[str]) -> list[IndexEntry]:
    entries = []
    for lineno, rec in iter_jsonl(stream):
        try:
            path = rec["term_path"]
            code = rec["code"]
        except (KeyError, TypeError) as exc:
            raise InvalidRecord(f"line {lineno}: bad index record ({exc})") from exc
        if not isinstance(path, list):
            raise InvalidRecord(f"line {lineno}: term_path must be a list")
        try:
            entries.append(IndexEntry(tuple(path), parse_code_id(code)))
        except (MalformedCode, UnknownChapter, InvalidRecord) as exc:
            raise type(exc)(f"line {lineno}: {exc}") from exc
    return entries


def load_guidelines(stream: IO[bytes] | IO[str] | Iterable[str]) -> dict[str, GuidelineDoc]:
    docs: dict[str, GuidelineDoc] = {}
    for lineno, rec in iter_jsonl(stream):
        try:
            chapter, text = rec["chapter"], rec["text"]
        except (KeyError, TypeError) as exc:
            raise InvalidRecord(f"line {lineno}: bad guideline record ({exc})") from exc
        try:
            label = normalize_block(chapter)
        except MalformedCode as exc:
            raise MalformedCode(f"line {lineno}: {exc}") from exc
        if label not in CHAPTER_LABELS:
            raise UnknownChapter(f"line {lineno}: {chapter!r} is not a chapter label")
        if not isinstance(text, str) or not text.strip():
            raise InvalidRecord(f"line {lineno}: guideline text is empty")
        if label in docs:
            raise DuplicateChapter(f"line {lineno}: second guideline document for {label}")
        docs[label] = GuidelineDoc(label, text)
    return docs


def load_taxonomy(tabular, alpha_index=None, guidelines=None) -> Taxonomy:
    """Load all three resources from paths (``None`` skips a resource)."""
    from clh.io import open_text

    with open_text(tabular) as fh:
        tax = load_tabular(fh)
    if alpha_index is not None:
        with open_text(alpha_index) as fh:
            tax.alpha_index = load_alpha_index(fh)
        unknown = {e.code.text for e in tax.alpha_index if e.code.text not in tax.nodes}
        if unknown and tax.nodes:
            logger.warning("%d index codes are absent from the hierarchy", len(unknown))
    if guidelines is not None:
        with open_text(guidelines) as fh:
            tax.guidelines = load_guidelines(fh)
    return tax
