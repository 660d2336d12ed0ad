"""Inverted index with Okapi BM25 scoring."""

from __future__ import annotations

import math
import re
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field

from clh.errors import EmptyIndex
from clh.retrieval.ranking import Ranking

_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit. No stemming."""
    return [t for t in _SPLIT.split(text.lower()) if t]


@dataclass
class LexicalIndex:
    k1: float = 1.2
    b: float = 0.75
    postings: dict[str, list[tuple[int, int]]] = field(default_factory=dict)  # term -> [(doc, tf)]
    doc_lengths: list[int] = field(default_factory=list)

    @classmethod
    def build(cls, texts: Sequence[str], k1: float = 1.2, b: float = 0.75) -> LexicalIndex:
        index = cls(k1=k1, b=b)
        for doc_id, text in enumerate(texts):
            tokens = tokenize(text)
            index.doc_lengths.append(len(tokens))
            for term, tf in Counter(tokens).items():
                index.postings.setdefault(term, []).append((doc_id, tf))
        return index

    def __len__(self) -> int:
        return len(self.doc_lengths)

    @property
    def avgdl(self) -> float:
        return sum(self.doc_lengths) / len(self.doc_lengths) if self.doc_lengths else 0.0

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        n = len(self.doc_lengths)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def scores(self, query: str) -> dict[int, float]:
        """BM25 score for every document sharing at least one query term.

        Each distinct query term counts once.
        """
        avgdl = self.avgdl or 1.0
        out: dict[int, float] = {}
        for term in dict.fromkeys(tokenize(query)):
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for doc_id, tf in plist:
                norm = self.k1 * (1.0 - self.b + self.b * self.doc_lengths[doc_id] / avgdl)
                out[doc_id] = out.get(doc_id, 0.0) + idf * tf * (self.k1 + 1.0) / (tf + norm)
        return out


def bm25_topk(index: LexicalIndex, query: str, k: int) -> Ranking:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not len(index):
        raise EmptyIndex("lexical index is empty")
    return Ranking.from_scores(index.scores(query).items(), k=k, query=query)
