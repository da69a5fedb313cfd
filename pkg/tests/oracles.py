"""Brute-force reference implementations. Deliberately naive and independent of the package."""

from __future__ import annotations

import functools
import itertools
import math
import re
import unicodedata
from collections import Counter


def naive_tokens(text: str) -> list[str]:
    text = unicodedata.normalize("NFC", text).lower()
    out, cur = [], ""
    for ch in text:
        if ch.isalnum():
            cur += ch
        else:
            if cur:
                out.append(cur)
            cur = ""
    if cur:
        out.append(cur)
    return out


def naive_alias_score(query_tokens: list[str], alias_tokens: list[str]) -> int:
    total = 0
    for q in query_tokens:
        if q in alias_tokens:
            total += 2
        elif any(a.startswith(q) and a != q for a in alias_tokens):
            total += 1
    return total


def keyword_ranking(items, query: str, k: int, restrict=None) -> list[tuple[str, int]]:
    """Score every item directly and sort by (score desc, popularity desc, iri asc)."""
    q = naive_tokens(query)
    scored = []
    for it in items:
        if restrict is not None and it.iri not in restrict:
            continue
        best = max(naive_alias_score(q, naive_tokens(a)) for a in (it.label, *it.synonyms))
        if best > 0:
            scored.append((-best, -it.score, it.iri))
    scored.sort()
    return [(iri, -s) for s, _, iri in scored[:k]]


def cosine_scores(vectors, query_vec) -> list[float]:
    out = []
    qn = math.sqrt(sum(x * x for x in query_vec))
    for v in vectors:
        vn = math.sqrt(sum(x * x for x in v))
        if qn == 0 or vn == 0:
            out.append(0.0)
        else:
            out.append(sum(a * b for a, b in zip(v, query_vec)) / (qn * vn))
    return out


def contains(gt_row, pred_row) -> bool:
    need, have = Counter(gt_row), Counter(pred_row)
    return all(have[x] >= n for x, n in need.items())


def brute_force_matching(gt_rows, pred_rows) -> int:
    """Largest one-to-one assignment, by exhaustive search over which pred rows are taken."""
    ok = [[contains(g, p) for p in pred_rows] for g in gt_rows]

    @functools.lru_cache(maxsize=None)
    def best(i: int, used: int) -> int:
        if i == len(gt_rows):
            return 0
        out = best(i + 1, used)
        for j in range(len(pred_rows)):
            if ok[i][j] and not used & (1 << j):
                out = max(out, 1 + best(i + 1, used | (1 << j)))
        return out

    return best(0, 0)


def permutation_matching(gt_rows, pred_rows) -> int:
    """Same quantity via every injection of the smaller side; only feasible for tiny tables."""
    if not gt_rows or not pred_rows:
        return 0
    best = 0
    if len(gt_rows) <= len(pred_rows):
        for perm in itertools.permutations(range(len(pred_rows)), len(gt_rows)):
            best = max(best, sum(contains(g, pred_rows[j]) for g, j in zip(gt_rows, perm)))
    else:
        for perm in itertools.permutations(range(len(gt_rows)), len(pred_rows)):
            best = max(best, sum(contains(gt_rows[i], p) for p, i in zip(pred_rows, perm)))
    return best


def f1_from_matches(m: int, n_pred: int, n_gt: int) -> float:
    p = m / n_pred if n_pred else 0.0
    r = m / n_gt if n_gt else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0


def diversity_check(triples, key_index: int, limit: int = 2) -> bool:
    counts = Counter(t[key_index] for t in triples)
    return all(c <= limit for c in counts.values())


_WS = re.compile(r"\s+")


def squash(text: str) -> str:
    return _WS.sub(" ", text).strip()
