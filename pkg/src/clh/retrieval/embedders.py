from __future__ import annotations

import hashlib
from collections.abc import Sequence
from typing import Any, Protocol

import numpy as np

from clh.errors import BackendUnavailable, DimensionMismatch
from clh.http import JsonClient, RetryPolicy
from clh.retrieval.lexical import tokenize


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...

    def embed_many(self, texts: Sequence[str]) -> np.ndarray: ...

    def describe(self) -> dict[str, Any]: ...


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


class HashingEmbedder:
    """Deterministic offline embedder for tests and desk-scale runs.

    Character trigrams (padded with spaces) and whole words are hashed with a
    seeded BLAKE2b into ``dim`` signed buckets; the sum is L2-normalized.
    """

    def __init__(self, dim: int = 64, seed: int = 0, ngram: int = 3) -> None:
        self.dim = dim
        self.seed = seed
        self.ngram = ngram
        self._key = seed.to_bytes(8, "little", signed=False)

    def _features(self, text: str) -> list[str]:
        padded = f" {' '.join(tokenize(text))} "
        grams = [padded[i : i + self.ngram] for i in range(len(padded) - self.ngram + 1)]
        words = [f"w:{t}" for t in tokenize(text)]
        return grams + words or ["<empty>"]

    def embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        for feat in self._features(text):
            h = hashlib.blake2b(feat.encode("utf-8"), digest_size=8, key=self._key).digest()
            n = int.from_bytes(h, "little")
            v[n % self.dim] += 1.0 if (n >> 32) & 1 else -1.0
        if not v.any():  # features cancelled out
            v[int.from_bytes(hashlib.blake2b(text.encode(), digest_size=4).digest(), "little") % self.dim] = 1.0
        return _normalize(v)

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.vstack([self.embed(t) for t in texts])

    def describe(self) -> dict[str, Any]:
        return {"kind": "hashing", "dim": self.dim, "seed": self.seed, "ngram": self.ngram}


class HttpEmbedder:
    """Client for an OpenAI-compatible ``/embeddings`` endpoint."""

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int = 768,
        timeout: float = 30.0,
        api_key_env: str | None = "CLH_EMBEDDER_API_KEY",
        max_in_flight: int = 8,
        retry: RetryPolicy | None = None,
        batch_size: int = 64,
        transport=None,
        sleep=None,
    ) -> None:
        self.dim = dim
        self.model = model
        self.batch_size = batch_size
        kwargs = {"sleep": sleep} if sleep else {}
        self.client = JsonClient(base_url, timeout, api_key_env, max_in_flight, retry, transport, **kwargs)

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        rows = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start : start + self.batch_size])
            body = self.client.post("embeddings", {"model": self.model, "input": batch})
            try:
                data = sorted(body["data"], key=lambda d: d.get("index", 0))
                vecs = [np.asarray(d["embedding"], dtype=np.float64) for d in data]
            except (KeyError, TypeError) as exc:
                raise BackendUnavailable(f"malformed embeddings response: {exc}") from exc
            if len(vecs) != len(batch):
                raise BackendUnavailable(f"asked for {len(batch)} embeddings, got {len(vecs)}")
            for v in vecs:
                if v.shape != (self.dim,):
                    raise DimensionMismatch(f"expected dimension {self.dim}, got {v.shape[0]}")
                norm = np.linalg.norm(v)
                if norm == 0:
                    raise BackendUnavailable("embedding backend returned a zero vector")
                rows.append(v / norm)
        return np.vstack(rows) if rows else np.zeros((0, self.dim))

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def describe(self) -> dict[str, Any]:
        return {"kind": "http", "dim": self.dim, "model": self.model}
