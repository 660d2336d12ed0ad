"""Seeded synthetic fixtures for tests, benchmarks and offline demos.

The generated taxonomy has real chapter ranges and valid code shapes but
invented descriptions: every category is "<condition> of <site>" and its five
leaves add a qualifier, so siblings are each other's nearest neighbors in
description space. Notes mention each gold code by qualifier, condition and site, with the
gold codes of a note drawn from distinct chapters.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from clh.io import write_jsonl
from clh.pipeline import ClinicalNote
from clh.taxonomy import (
    CHAPTERS,
    DASH,
    IndexEntry,
    Taxonomy,
    chapter_of,
    load_alpha_index,
    load_guidelines,
    load_tabular,
)

CONDITIONS = [
    "inflammation", "stenosis", "ulcer", "abscess", "cyst", "fibrosis", "hemorrhage", "infarction",
    "neoplasm", "atrophy", "hypertrophy", "obstruction", "perforation", "calculus", "dysplasia",
    "ischemia", "necrosis", "prolapse", "fistula", "edema", "spasm", "torsion", "rupture", "infection",
    "degeneration", "insufficiency", "embolism", "thrombosis", "erosion", "polyp",
]
SITES = [
    "colon", "liver", "kidney", "lung", "heart valve", "pancreas", "gallbladder", "esophagus",
    "stomach", "bladder", "ureter", "trachea", "larynx", "spleen", "thyroid", "adrenal gland",
    "retina", "cornea", "inner ear", "spinal cord", "femur", "tibia", "shoulder joint", "knee joint",
    "skin of scalp", "skin of trunk", "uterus", "ovary", "prostate", "mesentery",
]
QUALIFIERS = [
    "acute", "chronic", "recurrent", "bilateral", "left side", "right side", "with hemorrhage",
    "without hemorrhage", "with obstruction", "unspecified", "postprocedural", "congenital",
    "traumatic", "drug induced", "severe", "mild", "in remission", "with complication",
]
SYNONYMS = {
    "inflammation": "itis", "ulcer": "ulceration", "cyst": "cystic lesion", "hemorrhage": "bleeding",
    "infarction": "infarct", "neoplasm": "tumor", "obstruction": "blockage", "calculus": "stone",
    "edema": "swelling", "infection": "sepsis focus", "insufficiency": "failure", "thrombosis": "clot",
}
FILLER = [
    "Patient seen on the ward this morning.",
    "Vital signs stable overnight.",
    "Family updated at bedside.",
    "Labs reviewed and discussed with the team.",
    "Tolerating diet without nausea.",
    "Plan to continue current management.",
    "No acute distress on examination.",
    "Imaging reviewed with radiology.",
]


@dataclass
class SyntheticFixture:
    taxonomy: Taxonomy
    notes: list[ClinicalNote]

    @property
    def alpha_index(self) -> list[IndexEntry]:
        return self.taxonomy.alpha_index

    def write(self, directory: str | Path) -> dict[str, Path]:
        """Write the four fixture files; returns their paths by role."""
        d = Path(directory)
        paths = {
            "tabular": d / "tabular.jsonl",
            "alpha_index": d / "alpha_index.jsonl",
            "guidelines": d / "guidelines.jsonl",
            "notes": d / "notes.jsonl",
        }
        write_jsonl(paths["tabular"], self.taxonomy.tabular_records())
        write_jsonl(paths["alpha_index"], [e.to_record() for e in self.taxonomy.alpha_index])
        write_jsonl(
            paths["guidelines"],
            [{"chapter": g.chapter, "text": g.text} for g in self.taxonomy.guidelines.values()],
        )
        write_jsonl(paths["notes"], [n.to_record() for n in self.notes])
        return paths


def _categories_in(start: str, end: str) -> list[str]:
    """Every three-character numeric category inside a chapter's range."""
    return [
        cat
        for letter in range(ord(start[0]), ord(end[0]) + 1)
        for n in range(100)
        if start <= (cat := f"{chr(letter)}{n:02d}") <= end
    ]


def synthetic_fixture(
    seed: int = 0,
    n_categories: int = 60,
    leaves_per_category: int = 5,
    n_terms: int = 500,
    n_notes: int = 50,
    max_gold: int = 3,
    missing_guideline: bool = True,
    vague: float = 0.25,
) -> SyntheticFixture:
    """Build a taxonomy with ``n_categories * leaves_per_category`` leaf codes.

    Args:
        seed: RNG seed; equal seeds give identical fixtures.
        n_categories: Three-character categories, spread round-robin over chapters.
        leaves_per_category: Assignable children per category (at most 9).
        n_terms: Alphabetical index size; must be at least the number of leaves.
        n_notes: Annotated notes to generate.
        max_gold: Upper bound on gold codes per note, each from its own chapter.
        missing_guideline: Leave one chapter without a guideline document.
        vague: Probability that a note names a condition only as "lesion of the <site>".
    """
    if not 1 <= leaves_per_category <= 9:
        raise ValueError("leaves_per_category must be in 1..9")
    rng = random.Random(seed)
    chapters = [(f"{start}{DASH}{end}", start, end) for start, end, _ in CHAPTERS if start != "U00"]
    pools = {label: _categories_in(start, end) for label, start, end in chapters}
    pairs = [(cond, site) for cond in CONDITIONS for site in SITES]
    rng.shuffle(pairs)
    if n_categories > len(pairs):
        raise ValueError("not enough description pairs for that many categories")

    records: list[dict] = [{"code": c[0], "description": f"Chapter {c[0]}", "parent": None, "notes": {}} for c in chapters]
    leaves: list[tuple[str, str, str, str]] = []  # code, condition, site, qualifier
    for i in range(n_categories):
        chapter = chapters[i % len(chapters)][0]
        cat = pools[chapter].pop(rng.randrange(len(pools[chapter])))
        cond, site = pairs[i]
        records.append(
            {
                "code": cat,
                "description": f"{cond.capitalize()} of {site}",
                "parent": chapter,
                "notes": {"excludes1": [f"{cond} of {rng.choice(SITES)} ({rng.choice(sorted(pools[chapter]))})"]}
                if rng.random() < 0.5
                else {},
            }
        )
        for digit, qual in zip(sorted(rng.sample(range(10), leaves_per_category)), rng.sample(QUALIFIERS, leaves_per_category)):
            code = f"{cat}.{digit}"
            records.append({"code": code, "description": f"{cond.capitalize()} of {site}, {qual}", "parent": cat, "notes": {}})
            leaves.append((code, cond, site, qual))

    if n_terms < len(leaves):
        raise ValueError("n_terms must cover every leaf at least once")
    entries = [{"term_path": [cond.capitalize(), site, qual], "code": code} for code, cond, site, qual in leaves]
    while len(entries) < n_terms:
        code, cond, site, qual = rng.choice(leaves)
        lead = SYNONYMS.get(cond, cond)
        path = [lead.capitalize(), f"{qual} {site}"] if rng.random() < 0.5 else [site.capitalize(), cond, qual]
        entries.append({"term_path": path, "code": code})

    used = [c[0] for c in chapters][: min(n_categories, len(chapters))]
    skip = used[-1] if missing_guideline else None
    guidelines = [
        {"chapter": ch, "text": f"Assign the most specific code in {ch}. Qualifiers such as laterality and acuity must be documented."}
        for ch in used
        if ch != skip
    ]

    taxonomy = load_tabular(records_to_lines(records))
    taxonomy.alpha_index = load_alpha_index(records_to_lines(entries))
    taxonomy.guidelines = load_guidelines(records_to_lines(guidelines))

    by_chapter: dict[str, list[tuple[str, str, str, str]]] = {}
    for leaf in leaves:
        by_chapter.setdefault(chapter_of(leaf[0]), []).append(leaf)
    notes = []
    for n in range(n_notes):
        picks = rng.sample(sorted(by_chapter), rng.randint(1, min(max_gold, len(by_chapter))))
        gold = [rng.choice(by_chapter[ch]) for ch in picks]
        parts: list[str] = []
        spans: list[tuple[str, tuple[int, int]]] = []
        cursor = 0
        for code, cond, site, qual in gold:
            filler = rng.choice(FILLER) + " "
            # a vague mention sometimes, so retrieval does not find every gold code
            phrase = f"{qual} {cond} of the {site}" if rng.random() >= vague else f"lesion of the {site}"
            start = cursor + len(filler) + len("Assessment: ")
            parts.append(f"{filler}Assessment: {phrase}. ")
            spans.append((code, (start, start + len(phrase))))
            cursor += len(parts[-1])
        text = "".join(parts) + rng.choice(FILLER)
        notes.append(
            ClinicalNote(
                id=f"syn{n:03d}",
                text=text,
                doc_type=rng.choice(["Discharge summary", "Physician", "Consult"]),
                gold=frozenset(c for c, *_ in gold),
                gold_evidence=spans,
            )
        )
    return SyntheticFixture(taxonomy, notes)


def records_to_lines(records: list[dict]) -> list[str]:
    return [json.dumps(r, ensure_ascii=False) + "\n" for r in records]


def synthetic_index_entries(n: int, seed: int = 0) -> list[IndexEntry]:
    """``n`` index entries from a synthetic fixture, in seeded random order."""
    fixture = synthetic_fixture(seed=seed, n_terms=max(n, 300), n_notes=0)
    entries = list(fixture.alpha_index)
    random.Random(seed).shuffle(entries)
    return entries[:n]
