"""Question/SPARQL example pairs used for few-shot prompting."""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass
from typing import Sequence

from kgsparql.vector_index import EmbeddingProvider, VectorIndex, build_vector_index


@dataclass(frozen=True)
class ExamplePair:
    question: str
    sparql: str
    kg: str

    def __post_init__(self):
        if not self.sparql.strip():
            raise ValueError("example SPARQL must not be empty")

    def to_dict(self) -> dict:
        return {"question": self.question, "sparql": self.sparql, "kg": self.kg}

    @classmethod
    def from_dict(cls, d: dict) -> "ExamplePair":
        return cls(d["question"], d["sparql"], d["kg"])


def load_example_pairs(path: str | os.PathLike, kg: str) -> list[ExamplePair]:
    """One JSON object per line with ``question`` and ``sparql`` fields."""
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                pairs.append(ExamplePair(d["question"], d["sparql"], d.get("kg", kg)))
            except (ValueError, KeyError) as e:
                raise ValueError(f"{path}:{lineno}: bad example record ({e})") from None
    return pairs


class ExampleStore:
    def __init__(self, pairs: Sequence[ExamplePair], provider: EmbeddingProvider):
        self.pairs = list(pairs)
        self.provider = provider
        self.index: VectorIndex = build_vector_index(self.pairs, provider, text_fn=lambda p: p.question)

    def __len__(self) -> int:
        return len(self.pairs)

    def similar(self, question: str, k: int = 3) -> list[ExamplePair]:
        return [h.item for h in self.index.search(question, self.provider, k=k)]

    def sample(self, rng: random.Random, k: int = 3) -> list[ExamplePair]:
        picks = rng.sample(range(len(self.pairs)), min(k, len(self.pairs)))
        return [self.pairs[i] for i in picks]
