"""Exact cosine-similarity search over items embedded by a pluggable provider."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np
import requests

from kgsparql.catalog import ItemRecord
from kgsparql.keyword_index import SearchHit, SearchHits, rank_order, tokenize

logger = logging.getLogger(__name__)

MAGIC = b"KGVX"
VERSION = 1
MAX_INFOS = 3
NORM_TOL = 1e-5
# similarities are rounded before ranking so that mathematically equal
# cosines tie exactly and fall through to the popularity tie-break
SIM_DECIMALS = 9


class EmbeddingError(RuntimeError):
    pass


class EmbeddingProvider(Protocol):
    provider_id: str
    dimension: int

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Return an array of shape (len(texts), dimension) of unit vectors."""
        ...


def normalize_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    # all-zero rows (text without tokens) stay zero
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


class HashingEmbedder:
    """Deterministic offline provider: token counts hashed into ``dimension`` buckets."""

    def __init__(self, dimension: int = 64):
        self.dimension = dimension
        self.provider_id = f"hashing-{dimension}"

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dimension

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension), dtype=np.float64)
        for row, text in enumerate(texts):
            for tok in tokenize(text):
                out[row, self._bucket(tok)] += 1.0
        return normalize_rows(out)


class HttpEmbeddingProvider:
    """Remote embedding service speaking the common ``POST /embeddings`` JSON shape."""

    def __init__(self, url: str, model: str, api_key: str | None = None,
                 dimension: int | None = None, timeout: float = 60.0):
        self.url = url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.provider_id = f"http:{model}"
        self._dimension = dimension
        self._session = requests.Session()

    @property
    def dimension(self) -> int:
        if self._dimension is None:
            self._dimension = int(self.embed(["dimension probe"]).shape[1])
        return self._dimension

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        url = self.url if self.url.endswith("/embeddings") else self.url + "/embeddings"
        try:
            resp = self._session.post(url, json={"model": self.model, "input": list(texts)},
                                      headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            data = resp.json()["data"]
        except (requests.RequestException, KeyError, ValueError) as e:
            raise EmbeddingError(f"embedding request failed: {e}") from e
        data = sorted(data, key=lambda d: d.get("index", 0))
        m = np.asarray([d["embedding"] for d in data], dtype=np.float64)
        if m.shape[0] != len(texts):
            raise EmbeddingError(f"expected {len(texts)} embeddings, got {m.shape[0]}")
        return normalize_rows(m)


def embed_item_text(r: ItemRecord) -> str:
    """Canonical text embedded for an item: the label plus up to three infos."""
    if not r.infos:
        return r.label
    return f"{r.label} ({'; '.join(r.infos[:MAX_INFOS])})"


def _item_key(item) -> str | None:
    return getattr(item, "iri", None)


def _item_score(item) -> int:
    return int(getattr(item, "score", 0))


def _item_to_dict(item) -> dict:
    return {"type": type(item).__name__, **item.to_dict()}


def _item_from_dict(d: dict):
    from kgsparql.fewshot import ExamplePair

    kind = d.pop("type")
    if kind == "ItemRecord":
        return ItemRecord.from_dict(d)
    if kind == "ExamplePair":
        return ExamplePair.from_dict(d)
    raise ValueError(f"unknown item type {kind!r}")


@dataclass
class SimilarHit:
    """Vector hit for items without an IRI (example pairs)."""

    item: object
    match_score: float
    rank: int


class VectorIndex:
    """Flat matrix of unit vectors; row ``i`` belongs to ``items[i]``."""

    def __init__(self, matrix: np.ndarray, items: Sequence, provider_id: str):
        if len(matrix) != len(items):
            raise ValueError("matrix rows and items differ in length")
        self.matrix = np.asarray(matrix, dtype=np.float32)
        self._m64 = self.matrix.astype(np.float64)
        self.items = list(items)
        self.provider_id = provider_id
        keys = [_item_key(it) for it in self.items]
        self._by_iri = {k: i for i, k in enumerate(keys) if k is not None}
        self.scores = np.array([_item_score(it) for it in self.items], dtype=np.int64)
        self.key_rank = rank_order([k or "" for k in keys]) if keys else np.zeros(0, np.int64)
        # items without IRIs keep insertion order on ties
        if not self._by_iri:
            self.key_rank = np.arange(len(self.items), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.items)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    def __contains__(self, iri: str) -> bool:
        return iri in self._by_iri

    def get(self, iri: str):
        i = self._by_iri.get(iri)
        return None if i is None else self.items[i]

    def similarities(self, query: str, provider: EmbeddingProvider) -> np.ndarray:
        if provider.provider_id != self.provider_id:
            raise EmbeddingError(
                f"index was built with provider {self.provider_id!r}, query uses {provider.provider_id!r}"
            )
        q = np.asarray(provider.embed([query]), dtype=np.float64)[0]
        if q.shape[0] != self.dimension:
            raise EmbeddingError(f"query vector has dimension {q.shape[0]}, index has {self.dimension}")
        return self._m64 @ q

    def search(
        self,
        query: str,
        provider: EmbeddingProvider,
        k: int = 10,
        restrict_to: Iterable[str] | None = None,
    ) -> SearchHits:
        if k < 1:
            raise ValueError("k must be >= 1")
        sims = self.similarities(query, provider)
        candidates = np.arange(len(self.items))
        if restrict_to is not None:
            candidates = np.asarray(sorted(self._by_iri[i] for i in set(restrict_to) if i in self._by_iri),
                                    dtype=np.int64)
        if not len(candidates):
            return SearchHits()
        rounded = np.round(sims[candidates], SIM_DECIMALS)
        order = np.lexsort((self.key_rank[candidates], -self.scores[candidates], -rounded))[:k]
        hit_cls = SearchHit if self._by_iri else SimilarHit
        return SearchHits(
            hit_cls(self.items[int(candidates[i])], float(sims[candidates[i]]), rank + 1)
            for rank, i in enumerate(order)
        )

    def save(self, path: str | os.PathLike) -> None:
        pid = self.provider_id.encode("utf-8")
        items = "\n".join(json.dumps(_item_to_dict(it), ensure_ascii=False) for it in self.items).encode("utf-8")
        n, d = self.matrix.shape
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<IQQI", VERSION, n, d, len(pid)))
            f.write(pid)
            f.write(self.matrix.astype("<f4").tobytes(order="C"))
            f.write(struct.pack("<Q", len(items)))
            f.write(items)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "VectorIndex":
        with open(path, "rb") as f:
            buf = f.read()
        if buf[:4] != MAGIC:
            raise ValueError(f"{path}: not a vector index file")
        hsize = struct.calcsize("<IQQI")
        version, n, d, plen = struct.unpack("<IQQI", buf[4:4 + hsize])
        if version != VERSION:
            raise ValueError(f"{path}: unsupported index version {version} (expected {VERSION})")
        pos = 4 + hsize
        provider_id = buf[pos:pos + plen].decode("utf-8")
        pos += plen
        matrix = np.frombuffer(buf, dtype="<f4", count=n * d, offset=pos).reshape(n, d)
        pos += 4 * n * d
        (ilen,) = struct.unpack("<Q", buf[pos:pos + 8])
        pos += 8
        lines = buf[pos:pos + ilen].decode("utf-8").split("\n") if n else []
        return cls(matrix, [_item_from_dict(json.loads(line)) for line in lines], provider_id)


def build_vector_index(
    items: Sequence,
    provider: EmbeddingProvider,
    batch: int = 256,
    text_fn: Callable[[object], str] = embed_item_text,
    retries: int = 3,
    backoff: float = 0.5,
) -> VectorIndex:
    """Embed every item in batches. A batch that keeps failing aborts the build."""
    items = list(items)
    if not items:
        raise ValueError("cannot build a vector index from an empty item list")
    texts = [text_fn(it) for it in items]
    blocks = []
    for start in range(0, len(texts), batch):
        chunk = texts[start:start + batch]
        for attempt in range(retries):
            try:
                vecs = np.asarray(provider.embed(chunk), dtype=np.float64)
                break
            except EmbeddingError as e:
                if attempt == retries - 1:
                    raise EmbeddingError(
                        f"batch {start // batch} (items {start}-{start + len(chunk) - 1}) failed: {e}"
                    ) from e
                time.sleep(backoff * 2**attempt)
        if vecs.ndim != 2 or vecs.shape != (len(chunk), provider.dimension):
            raise EmbeddingError(
                f"provider returned shape {vecs.shape}, expected ({len(chunk)}, {provider.dimension})"
            )
        norms = np.linalg.norm(vecs, axis=1)
        if np.any((norms > 0) & (np.abs(norms - 1.0) > NORM_TOL)):
            vecs = normalize_rows(vecs)
        blocks.append(vecs)
    return VectorIndex(np.vstack(blocks), items, provider.provider_id)
