from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from fractions import Fraction

RRF_K = 60


@dataclass(frozen=True)
class Ranking:
    """Entry ids with scores, best first. Ties are ordered by ascending id."""

    items: tuple[tuple[int, float], ...] = ()
    query: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        ids = [i for i, _ in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate entry ids in ranking")
        for (i1, s1), (i2, s2) in zip(self.items, self.items[1:]):
            if s2 > s1 or (s2 == s1 and i2 < i1):
                raise ValueError("ranking is not sorted by (score desc, id asc)")

    @classmethod
    def from_scores(cls, scores: Iterable[tuple[int, float]], k: int | None = None, query: str = "") -> Ranking:
        ordered = sorted(scores, key=lambda t: (-t[1], t[0]))
        if k is not None:
            ordered = ordered[:k]
        return cls(tuple((int(i), float(s)) for i, s in ordered), query)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.items]

    def truncate(self, k: int) -> Ranking:
        return Ranking(self.items[:k], self.query)


def rrf_fuse(rankings: Sequence[Ranking], k_rrf: int = RRF_K) -> Ranking:
    """Reciprocal rank fusion: ``score(e) = sum 1 / (k_rrf + rank_e)``, ranks from 1."""
    if not rankings:
        raise ValueError("rrf_fuse needs at least one ranking")
    # Exact rational sums, rounded once: scores that tie in exact arithmetic
    # stay tied as floats and then break by id, whatever the input order.
    scores: dict[int, Fraction] = {}
    for ranking in rankings:
        for rank, (entry, _) in enumerate(ranking.items, start=1):
            scores[entry] = scores.get(entry, Fraction(0)) + Fraction(1, k_rrf + rank)
    return Ranking.from_scores(((e, float(v)) for e, v in scores.items()), query=rankings[0].query)
