"""Independent reference implementations used as test oracles.

These are deliberately naive (brute force, exact arithmetic, no shared code
with the package) so that agreement with the package is meaningful.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction

import numpy as np


def confusion_oracle(preds, gold, labels=None):
    """Micro/macro F1, EMR, precision, recall from an explicit note x label matrix."""
    notes = sorted(preds)
    universe = sorted(set().union(*preds.values(), *gold.values())) if labels is None else list(labels)
    everything = sorted(set(universe) | set().union(*preds.values(), *gold.values()))
    cell = {}
    for lab in everything:
        tp = fp = fn = 0
        for n in notes:
            p, g = lab in preds[n], lab in gold[n]
            tp += p and g
            fp += p and not g
            fn += g and not p
        cell[lab] = (tp, fp, fn)
    TP = sum(c[0] for c in cell.values())
    FP = sum(c[1] for c in cell.values())
    FN = sum(c[2] for c in cell.values())
    precision = TP / (TP + FP) if TP + FP else 0.0
    recall = TP / (TP + FN) if TP + FN else 0.0
    micro = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    f1s = []
    for lab in universe:
        tp, fp, fn = cell.get(lab, (0, 0, 0))
        f1s.append(2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0)
    macro = sum(f1s) / len(f1s) if f1s else 0.0
    emr = sum(set(preds[n]) == set(gold[n]) for n in notes) / len(notes)
    return {"micro_f1": micro, "macro_f1": macro, "emr": emr, "precision": precision, "recall": recall}


def bm25_oracle(docs, query, k1=1.2, b=0.75):
    """Textbook BM25 over whole token lists, recomputing every statistic per call."""
    tok = lambda s: [t for t in re.split(r"[^0-9a-z]+", s.lower()) if t]  # noqa: E731
    toks = [tok(d) for d in docs]
    n = len(docs)
    avgdl = sum(map(len, toks)) / n
    qterms = set(tok(query))
    scores = {}
    for i, d in enumerate(toks):
        s = 0.0
        matched = False
        for t in sorted(qterms):
            tf = d.count(t)
            if not tf:
                continue
            matched = True
            df = sum(1 for x in toks if t in x)
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(d) / avgdl))
        if matched:
            scores[i] = s
    return scores


def cosine_topk_oracle(vectors, query, k):
    """Exhaustive scan over cosines rounded to 12 decimals; ties by ascending id."""
    sims = [(round(sum(float(a) * float(b) for a, b in zip(v, query)), 12), i) for i, v in enumerate(vectors)]
    sims.sort(key=lambda t: (-t[0], t[1]))
    return [i for _, i in sims[:k]]


def rrf_oracle(rankings, k_rrf=60):
    """Exact rational RRF scores and the induced order (ties by ascending id)."""
    scores: dict[int, Fraction] = {}
    for r in rankings:
        for rank, e in enumerate(r, start=1):
            scores[e] = scores.get(e, Fraction(0)) + Fraction(1, k_rrf + rank)
    order = sorted(scores, key=lambda e: (-scores[e], e))
    return order, scores


def nearest_codes_oracle(codes, vectors, code, n):
    """The ``n`` nearest other codes by cosine (to 12 decimals), ties by ascending code text."""
    i = codes.index(code)
    q = vectors[i]
    cand = [(-round(sum(float(a) * float(b) for a, b in zip(vectors[j], q)), 12), codes[j]) for j in range(len(codes)) if j != i]
    cand.sort()
    return [c for _, c in cand[:n]]


def answer_oracle(raw: str):
    """Reference answer reader: payload of the last innermost <answer> span.

    Scans left to right; an opener is replaced by any later opener seen
    before its closer, and a closed span resumes the scan after the closer.
    """
    payload = None
    pos = 0
    while True:
        opener = raw.find("<answer>", pos)
        if opener < 0:
            return payload
        close = raw.find("</answer>", opener + len("<answer>"))
        if close < 0:
            return payload
        inner = raw.rfind("<answer>", opener, close)
        payload = raw[inner + len("<answer>"): close]
        pos = close + len("</answer>")


def ids_oracle(payload: str, max_id: int):
    nums = [int(x) for x in re.findall(r"[0-9]+", payload)]
    if not nums:
        return None
    if 0 in nums:
        return []
    out = []
    for x in nums:
        if x <= max_id and x not in out:
            out.append(x)
    return out


def candidate_law_violations(codes, vectors, gold, k, negatives, cache=None):
    """Check a candidate set against brute-force nearest neighbors.

    Every gold code's ``k`` nearest non-gold codes must be present, and the
    negative count must be ``k * |gold|`` capped by the corpus size. When the
    per-gold neighbor lists do not overlap the set must be exactly their union.
    Returns a list of human-readable violations (empty when the law holds).
    ``cache`` may be a dict reused across calls to memoise full neighbor lists.
    """
    cache = {} if cache is None else cache
    gold = sorted(set(gold))
    problems = []
    negatives = set(negatives)
    if negatives & set(gold):
        problems.append("a gold code was used as a negative")
    others = [c for c in codes if c not in gold]
    expected_size = min(k * len(gold), len(others))
    if len(negatives) != expected_size:
        problems.append(f"{len(negatives)} negatives, expected {expected_size}")
    union = set()
    overlap = False
    for g in gold:
        if g not in cache:
            cache[g] = nearest_codes_oracle(codes, vectors, g, len(codes))
        ranked = [c for c in cache[g] if c not in gold][:k]
        missing = set(ranked) - negatives
        if missing:
            problems.append(f"{g}: nearest {sorted(missing)} missing")
        overlap |= bool(union & set(ranked))
        union |= set(ranked)
    if not overlap and len(union) == expected_size and union != negatives:
        problems.append("negatives differ from the union of nearest neighbors")
    return problems
