"""HNSW graph over unit-norm vectors, scored by cosine (= dot product).

Follows Malkov & Yashunin: a layered proximity graph, greedy descent through
the sparse upper layers, then a beam search of width ``ef`` on layer 0.
The beam keeps expanding until it holds ``ef`` results, so an ``ef`` at least
the corpus size walks the whole connected graph; for that case we skip the
graph and scan exhaustively, which is exact by construction.
"""

from __future__ import annotations

import heapq
import math
from collections.abc import Sequence
from typing import Any

import numpy as np

from clh.errors import DimensionMismatch, EmptyIndex
from clh.retrieval.ranking import Ranking

NORM_TOL = 1e-6
# Cosines are rounded before ranking so that ties which are exact in real
# arithmetic break by ascending id instead of by floating point noise.
TIE_DECIMALS = 12


def _sims(vectors: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.round(vectors @ q, TIE_DECIMALS)


def _check_unit(vectors: np.ndarray) -> None:
    norms = np.linalg.norm(vectors, axis=-1)
    if np.any(np.abs(norms - 1.0) > NORM_TOL):
        raise ValueError("vectors must be unit-norm (tolerance 1e-6)")


class DenseIndex:
    def __init__(
        self,
        dim: int,
        m: int = 32,
        ef_construct: int = 256,
        ef_search: int = 128,
        seed: int = 0,
    ) -> None:
        if m < 2:
            raise ValueError("m must be >= 2")
        self.dim = dim
        self.m = m
        self.m0 = 2 * m
        self.ef_construct = ef_construct
        self.ef_search = ef_search
        self.seed = seed
        self._ml = 1.0 / math.log(m)
        self._rng = np.random.default_rng(seed)
        self._vectors = np.zeros((0, dim), dtype=np.float64)
        self._levels: list[int] = []
        self._links: list[list[list[int]]] = []  # node -> layer -> neighbor ids
        self._entry: int | None = None
        self._max_level = -1

    def __len__(self) -> int:
        return len(self._levels)

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    # construction

    def add(self, vectors: np.ndarray | Sequence[Sequence[float]]) -> None:
        vecs = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        if vecs.size == 0:
            return
        if vecs.shape[1] != self.dim:
            raise DimensionMismatch(f"expected dimension {self.dim}, got {vecs.shape[1]}")
        _check_unit(vecs)
        start = len(self)
        self._vectors = np.vstack([self._vectors, vecs])
        for node in range(start, start + len(vecs)):
            self._insert(node)

    def _random_level(self) -> int:
        return int(-math.log(1.0 - self._rng.random()) * self._ml)

    def _insert(self, node: int) -> None:
        level = self._random_level()
        self._levels.append(level)
        self._links.append([[] for _ in range(level + 1)])
        if self._entry is None:
            self._entry, self._max_level = node, level
            return
        q = self._vectors[node]
        ep = [self._entry]
        for layer in range(self._max_level, level, -1):
            ep = [self._search_layer(q, ep, 1, layer)[0][1]]
        for layer in range(min(level, self._max_level), -1, -1):
            found = self._search_layer(q, ep, self.ef_construct, layer)
            cap = self.m0 if layer == 0 else self.m
            chosen = [i for _, i in found[: self.m]]
            self._links[node][layer] = chosen
            for nb in chosen:
                links = self._links[nb][layer]
                links.append(node)
                if len(links) > cap:
                    self._links[nb][layer] = self._closest(self._vectors[nb], links, cap)
            ep = [i for _, i in found]
        if level > self._max_level:
            self._entry, self._max_level = node, level

    def _closest(self, q: np.ndarray, ids: list[int], n: int) -> list[int]:
        sims = _sims(self._vectors[ids], q)
        order = sorted(range(len(ids)), key=lambda j: (-sims[j], ids[j]))
        return [ids[j] for j in order[:n]]

    # search

    def _search_layer(self, q: np.ndarray, entry: list[int], ef: int, layer: int) -> list[tuple[float, int]]:
        """Beam search; returns ``(sim, id)`` sorted best first."""
        visited = set(entry)
        sims = _sims(self._vectors[entry], q)
        candidates = [(-float(s), i) for s, i in zip(sims, entry)]
        heapq.heapify(candidates)
        # min-heap on (sim, -id): the root is the worst kept result
        results = [(float(s), -i) for s, i in zip(sims, entry)]
        heapq.heapify(results)
        while len(results) > ef:
            heapq.heappop(results)
        while candidates:
            neg, c = heapq.heappop(candidates)
            if len(results) >= ef and -neg < results[0][0]:
                break
            fresh = [n for n in self._links[c][layer] if n not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            for s, n in zip(_sims(self._vectors[fresh], q), fresh):
                s = float(s)
                if len(results) < ef or (s, -n) > results[0]:
                    heapq.heappush(candidates, (-s, n))
                    heapq.heappush(results, (s, -n))
                    if len(results) > ef:
                        heapq.heappop(results)
        return sorted(((s, -negid) for s, negid in results), key=lambda t: (-t[0], t[1]))

    def _validate_query(self, query: np.ndarray | Sequence[float]) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.dim:
            raise DimensionMismatch(f"expected dimension {self.dim}, got {q.shape[0]}")
        _check_unit(q)
        return q

    def exhaustive_topk(self, query: np.ndarray | Sequence[float], k: int) -> Ranking:
        q = self._validate_query(query)
        sims = _sims(self._vectors, q)
        return Ranking.from_scores(enumerate(sims.tolist()), k=k)

    def search(self, query: np.ndarray | Sequence[float], k: int, ef: int | None = None) -> Ranking:
        if k < 1:
            raise ValueError("k must be >= 1")
        if not len(self):
            raise EmptyIndex("dense index is empty")
        ef = max(ef if ef is not None else self.ef_search, k)
        if ef >= len(self):
            return self.exhaustive_topk(query, k)
        q = self._validate_query(query)
        ep = [self._entry]
        for layer in range(self._max_level, 0, -1):
            ep = [self._search_layer(q, ep, 1, layer)[0][1]]
        found = self._search_layer(q, ep, ef, 0)
        return Ranking.from_scores(((i, s) for s, i in found), k=k)

    # persistence

    def to_dict(self) -> dict[str, Any]:
        return {
            "dim": self.dim,
            "m": self.m,
            "ef_construct": self.ef_construct,
            "ef_search": self.ef_search,
            "seed": self.seed,
            "levels": list(self._levels),
            "links": self._links,
            "entry": self._entry,
            "vectors": self._vectors.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DenseIndex:
        index = cls(data["dim"], data["m"], data["ef_construct"], data["ef_search"], data["seed"])
        index._vectors = np.asarray(data["vectors"], dtype=np.float64).reshape(-1, data["dim"])
        index._levels = [int(x) for x in data["levels"]]
        index._links = [[list(layer) for layer in node] for node in data["links"]]
        index._entry = data["entry"]
        index._max_level = max(index._levels) if index._levels else -1
        if len(index._levels) != len(index._vectors):
            raise ValueError("snapshot has inconsistent node counts")
        return index


def dense_topk(index: DenseIndex, query_vector: np.ndarray | Sequence[float], k: int) -> Ranking:
    return index.search(query_vector, k)
