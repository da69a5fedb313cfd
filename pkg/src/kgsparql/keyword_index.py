"""Prefix-keyword index over item labels and synonyms.

A query token scores 2 against an alias if the alias contains it as a token,
1 if it is a proper prefix of one of the alias tokens, and 0 otherwise. An
alias scores the sum over query tokens, an item the maximum over its aliases.
Ties are broken by popularity score, then by IRI.
"""

from __future__ import annotations

import bisect
import json
import mmap
import os
import re
import struct
import unicodedata
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from kgsparql.catalog import ItemRecord

EXACT_WEIGHT = 2
PREFIX_WEIGHT = 1
CANDIDATE_CAP = 1_000_000
MAGIC = b"KGKW"
VERSION = 1
_ALIAS_BITS = 16
_MAX_ALIASES = 1 << _ALIAS_BITS
_TOKEN_SPLIT = re.compile(r"[^\w]+|_+")
_PREFIX_END = "\U0010ffff"


def tokenize(text: str) -> list[str]:
    """Lowercased NFC tokens, split on anything that is not a letter or digit."""
    text = unicodedata.normalize("NFC", text).lower()
    return [t for t in _TOKEN_SPLIT.split(text) if t]


def score_alias(query_tokens: Sequence[str], alias_tokens: Sequence[str]) -> int:
    alias = set(alias_tokens)
    total = 0
    for q in query_tokens:
        if q in alias:
            total += EXACT_WEIGHT
        elif any(a.startswith(q) for a in alias):
            total += PREFIX_WEIGHT
    return total


@dataclass(frozen=True)
class SearchHit:
    item: ItemRecord
    match_score: float
    rank: int

    @property
    def iri(self) -> str:
        return self.item.iri


class SearchHits(list):
    """List of hits; ``approximate`` is set when the candidate cap cut the scan short."""

    approximate: bool = False

    def __init__(self, hits: Iterable[SearchHit] = (), approximate: bool = False):
        super().__init__(hits)
        self.approximate = approximate


def rank_order(iris: Sequence[str]) -> np.ndarray:
    """Position of each IRI in ascending IRI order, for numeric tie-breaking."""
    order = sorted(range(len(iris)), key=iris.__getitem__)
    ranks = np.empty(len(iris), dtype=np.int64)
    ranks[order] = np.arange(len(iris), dtype=np.int64)
    return ranks


class KeywordIndex:
    """Immutable after construction; safe for concurrent searches."""

    def __init__(
        self,
        items: Sequence[ItemRecord],
        vocab: list[str],
        offsets: np.ndarray,
        keys: np.ndarray,
    ):
        self.items = list(items)
        self.vocab = vocab
        self.offsets = offsets
        self.keys = keys
        self.scores = np.array([it.score for it in self.items], dtype=np.int64)
        self.iri_rank = rank_order([it.iri for it in self.items])
        self._by_iri = {it.iri: i for i, it in enumerate(self.items)}

    def __len__(self) -> int:
        return len(self.items)

    def get(self, iri: str) -> ItemRecord | None:
        i = self._by_iri.get(iri)
        return None if i is None else self.items[i]

    def __contains__(self, iri: str) -> bool:
        return iri in self._by_iri

    @classmethod
    def build(cls, items: Iterable[ItemRecord]) -> "KeywordIndex":
        items = list(items)
        token_ids: dict[str, int] = {}
        post_tok: list[int] = []
        post_key: list[int] = []
        for item_id, item in enumerate(items):
            aliases = item.aliases
            if len(aliases) > _MAX_ALIASES:
                aliases = aliases[:_MAX_ALIASES]
            for alias_id, alias in enumerate(aliases):
                key = (item_id << _ALIAS_BITS) | alias_id
                for tok in dict.fromkeys(tokenize(alias)):
                    tid = token_ids.setdefault(tok, len(token_ids))
                    post_tok.append(tid)
                    post_key.append(key)
        vocab = sorted(token_ids)
        remap = np.empty(len(token_ids), dtype=np.int64)
        for rank, tok in enumerate(vocab):
            remap[token_ids[tok]] = rank
        tok_arr = remap[np.asarray(post_tok, dtype=np.int64)] if post_tok else np.zeros(0, np.int64)
        key_arr = np.asarray(post_key, dtype=np.int64)
        order = np.lexsort((key_arr, tok_arr))
        tok_arr, key_arr = tok_arr[order], key_arr[order]
        offsets = np.searchsorted(tok_arr, np.arange(len(vocab) + 1)).astype(np.int64)
        return cls(items, vocab, offsets, key_arr)

    def _token_range(self, token: str) -> tuple[int, int, bool]:
        lo = bisect.bisect_left(self.vocab, token)
        hi = bisect.bisect_left(self.vocab, token + _PREFIX_END, lo)
        exact = lo < len(self.vocab) and self.vocab[lo] == token
        return lo, hi, exact

    def search(
        self,
        query: str,
        k: int = 10,
        restrict_to: Iterable[str] | None = None,
        candidate_cap: int = CANDIDATE_CAP,
    ) -> SearchHits:
        if k < 1:
            raise ValueError("k must be >= 1")
        q_tokens = tokenize(query)
        if not q_tokens or not self.items:
            return SearchHits()

        allowed = None
        if restrict_to is not None:
            ids = [self._by_iri[i] for i in restrict_to if i in self._by_iri]
            if not ids:
                return SearchHits()
            allowed = np.asarray(sorted(ids), dtype=np.int64)

        budget = candidate_cap
        approximate = False
        parts_key: list[np.ndarray] = []
        parts_val: list[np.ndarray] = []
        for tok in q_tokens:
            lo, hi, exact = self._token_range(tok)
            exact_keys = np.zeros(0, np.int64)
            if exact:
                exact_keys = self.keys[self.offsets[lo]:self.offsets[lo + 1]]
                lo += 1
            start, end = int(self.offsets[lo]), int(self.offsets[hi])
            budget -= len(exact_keys)
            if end - start > max(budget, 0):
                end = start + max(budget, 0)
                approximate = True
            budget -= end - start
            prefix_keys = np.unique(self.keys[start:end])
            if len(exact_keys):
                prefix_keys = prefix_keys[~np.isin(prefix_keys, exact_keys, assume_unique=True)]
            if allowed is not None:
                exact_keys = exact_keys[np.isin(exact_keys >> _ALIAS_BITS, allowed)]
                prefix_keys = prefix_keys[np.isin(prefix_keys >> _ALIAS_BITS, allowed)]
            parts_key += [exact_keys, prefix_keys]
            parts_val += [
                np.full(len(exact_keys), EXACT_WEIGHT, np.int64),
                np.full(len(prefix_keys), PREFIX_WEIGHT, np.int64),
            ]

        all_keys = np.concatenate(parts_key)
        if not len(all_keys):
            return SearchHits(approximate=approximate)
        uniq, inverse = np.unique(all_keys, return_inverse=True)
        alias_scores = np.bincount(inverse, weights=np.concatenate(parts_val)).astype(np.int64)
        item_ids = uniq >> _ALIAS_BITS
        # uniq is sorted, so alias keys of one item are contiguous
        starts = np.flatnonzero(np.r_[True, item_ids[1:] != item_ids[:-1]])
        items = item_ids[starts]
        best = np.maximum.reduceat(alias_scores, starts)
        order = np.lexsort((self.iri_rank[items], -self.scores[items], -best))[:k]
        hits = [
            SearchHit(self.items[int(items[i])], int(best[i]), rank + 1)
            for rank, i in enumerate(order)
        ]
        return SearchHits(hits, approximate=approximate)

    def save(self, path: str | os.PathLike) -> None:
        vocab_blob = "\n".join(self.vocab).encode("utf-8")
        items_blob = "\n".join(json.dumps(it.to_dict(), ensure_ascii=False) for it in self.items).encode("utf-8")
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<IQQQQQ", VERSION, len(self.items), len(self.vocab), len(self.keys),
                                len(vocab_blob), len(items_blob)))
            f.write(vocab_blob)
            f.write(items_blob)
            pad = (-f.tell()) % 8
            f.write(b"\0" * pad)
            f.write(self.offsets.astype("<i8").tobytes())
            f.write(self.keys.astype("<i8").tobytes())

    @classmethod
    def load(cls, path: str | os.PathLike, use_mmap: bool = False) -> "KeywordIndex":
        """Load a saved index. With ``use_mmap`` the postings stay on disk."""
        with open(path, "rb") as f:
            buf = mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ) if use_mmap else f.read()
        if bytes(buf[:4]) != MAGIC:
            raise ValueError(f"{path}: not a keyword index file")
        header = struct.calcsize("<IQQQQQ")
        version, n_items, n_vocab, n_keys, vlen, ilen = struct.unpack("<IQQQQQ", buf[4:4 + header])
        if version != VERSION:
            raise ValueError(f"{path}: unsupported index version {version} (expected {VERSION})")
        pos = 4 + header
        vocab = bytes(buf[pos:pos + vlen]).decode("utf-8").split("\n") if n_vocab else []
        pos += vlen
        lines = bytes(buf[pos:pos + ilen]).decode("utf-8").split("\n") if n_items else []
        items = [ItemRecord.from_dict(json.loads(line)) for line in lines]
        pos += ilen
        pos += (-pos) % 8
        offsets = np.frombuffer(buf, dtype="<i8", count=n_vocab + 1, offset=pos)
        pos += 8 * (n_vocab + 1)
        keys = np.frombuffer(buf, dtype="<i8", count=n_keys, offset=pos)
        return cls(items, vocab, offsets, keys)

