from clh.retrieval.embedders import Embedder, HashingEmbedder, HttpEmbedder
from clh.retrieval.hnsw import DenseIndex, dense_topk
from clh.retrieval.lexical import LexicalIndex, bm25_topk, tokenize
from clh.retrieval.ranking import Ranking, rrf_fuse
from clh.retrieval.search import RecallReport, RetrievalParams, TermIndex, recall_at_k

__all__ = [
    "DenseIndex",
    "Embedder",
    "HashingEmbedder",
    "HttpEmbedder",
    "LexicalIndex",
    "Ranking",
    "RecallReport",
    "RetrievalParams",
    "TermIndex",
    "bm25_topk",
    "dense_topk",
    "recall_at_k",
    "rrf_fuse",
    "tokenize",
]
