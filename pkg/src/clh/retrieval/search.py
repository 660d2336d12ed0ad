"""Hybrid term search over alphabetical-index entries."""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Literal

from clh.errors import EmptyIndex, SnapshotError
from clh.io import atomic_writer
from clh.retrieval.embedders import Embedder
from clh.retrieval.hnsw import DenseIndex
from clh.retrieval.lexical import LexicalIndex, bm25_topk
from clh.retrieval.ranking import Ranking, rrf_fuse
from clh.taxonomy import IndexEntry, parse_code_id

logger = logging.getLogger(__name__)

Mode = Literal["lexical", "dense", "hybrid"]
SNAPSHOT_FORMAT = "clh-term-index"
SNAPSHOT_VERSION = 1


@dataclass
class RetrievalParams:
    k: int = 10
    mode: Mode = "hybrid"
    k_rrf: int = 60
    fuse_depth: int = 100  # each sub-ranking is cut to this many before fusion
    k1: float = 1.2
    b: float = 0.75
    m: int = 32
    ef_construct: int = 256
    ef_search: int = 128
    seed: int = 0


class TermIndex:
    """Lexical and dense indices over the display strings of index entries.

    Entry ids are positions in ``entries``. Built once, then read-only.
    """

    def __init__(
        self,
        entries: Sequence[IndexEntry],
        lexical: LexicalIndex,
        dense: DenseIndex,
        embedder: Embedder,
        params: RetrievalParams,
    ) -> None:
        self.entries = list(entries)
        self.lexical = lexical
        self.dense = dense
        self.embedder = embedder
        self.params = params

    @classmethod
    def build(
        cls, entries: Sequence[IndexEntry], embedder: Embedder, params: RetrievalParams | None = None
    ) -> TermIndex:
        params = params or RetrievalParams()
        texts = [e.display for e in entries]
        lexical = LexicalIndex.build(texts, k1=params.k1, b=params.b)
        dense = DenseIndex(embedder.dim, params.m, params.ef_construct, params.ef_search, params.seed)
        dense.add(embedder.embed_many(texts))
        return cls(entries, lexical, dense, embedder, params)

    def __len__(self) -> int:
        return len(self.entries)

    def ranking(self, query: str, k: int, mode: Mode | None = None) -> Ranking:
        mode = mode or self.params.mode
        if not self.entries:
            raise EmptyIndex("term index is empty")
        if mode == "lexical":
            return bm25_topk(self.lexical, query, k)
        if mode == "dense":
            return Ranking(self.dense.search(self.embedder.embed(query), k).items, query)
        if mode == "hybrid":
            depth = max(k, self.params.fuse_depth)
            lex = bm25_topk(self.lexical, query, depth)
            den = Ranking(self.dense.search(self.embedder.embed(query), depth).items, query)
            return rrf_fuse([lex, den], self.params.k_rrf).truncate(k)
        raise ValueError(f"unknown retrieval mode {mode!r}")

    def retrieve_terms(self, query: str, k: int | None = None, mode: Mode | None = None) -> list[tuple[IndexEntry, float]]:
        ranking = self.ranking(query, k or self.params.k, mode)
        return [(self.entries[i], s) for i, s in ranking]

    def retrieved_codes(self, query: str, k: int, mode: Mode | None = None) -> set[str]:
        return {e.code.text for e, _ in self.retrieve_terms(query, k, mode)}

    # persistence

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "params": asdict(self.params),
            "embedder": self.embedder.describe(),
            "entries": [e.to_record() for e in self.entries],
            "dense": self.dense.to_dict(),
        }

    def save(self, path: str | Path) -> None:
        with atomic_writer(path) as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path, embedder: Embedder) -> TermIndex:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise SnapshotError(f"cannot read index snapshot {path}: {exc}") from exc
        if data.get("format") != SNAPSHOT_FORMAT or data.get("version") != SNAPSHOT_VERSION:
            raise SnapshotError(f"{path}: unsupported snapshot format/version")
        if data["embedder"] != embedder.describe():
            raise SnapshotError(f"{path}: built with embedder {data['embedder']}, not {embedder.describe()}")
        params = RetrievalParams(**data["params"])
        entries = [IndexEntry(tuple(r["term_path"]), parse_code_id(r["code"])) for r in data["entries"]]
        lexical = LexicalIndex.build([e.display for e in entries], k1=params.k1, b=params.b)
        dense = DenseIndex.from_dict(data["dense"])
        return cls(entries, lexical, dense, embedder, params)


@dataclass
class RecallReport:
    k: int
    per_query: list[float] = field(default_factory=list)
    skipped: int = 0

    @property
    def mean(self) -> float:
        return sum(self.per_query) / len(self.per_query) if self.per_query else 0.0


def recall_at_k(
    index: TermIndex,
    queries: Iterable[tuple[str, Iterable[str]]],
    k: int,
    mode: Mode | None = None,
) -> RecallReport:
    """Share of each query's gold codes covered by the codes of its top-k entries.

    Queries with an empty gold set are skipped and counted in ``skipped``.
    """
    report = RecallReport(k=k)
    for query, gold in queries:
        gold = {str(c) for c in gold}
        if not gold:
            report.skipped += 1
            continue
        found = index.retrieved_codes(query, k, mode)
        report.per_query.append(len(gold & found) / len(gold))
    return report
