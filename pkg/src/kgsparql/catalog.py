"""Knowledge graph catalog and index source data (TSV item dumps)."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Mapping
from urllib.parse import urlparse

import yaml

from kgsparql.iris import PrefixMap

logger = logging.getLogger(__name__)

ItemKind = Literal["entity", "property"]

MAX_SCORE = 2**32 - 1
TSV_HEADER = ("iri", "label", "score", "synonyms", "infos")
LIST_SEP = ";"


class CatalogError(ValueError):
    pass


class DataFormatError(ValueError):
    """A malformed index source file. ``line`` is 1-based and counts the header."""

    def __init__(self, path: str | os.PathLike, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


@dataclass(frozen=True)
class ItemRecord:
    iri: str
    label: str
    score: int
    synonyms: tuple[str, ...] = ()
    infos: tuple[str, ...] = ()
    kind: ItemKind = "entity"

    @property
    def aliases(self) -> tuple[str, ...]:
        return (self.label, *self.synonyms)

    def to_dict(self) -> dict:
        return {
            "iri": self.iri,
            "label": self.label,
            "score": self.score,
            "synonyms": list(self.synonyms),
            "infos": list(self.infos),
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ItemRecord":
        return cls(
            iri=d["iri"],
            label=d["label"],
            score=int(d["score"]),
            synonyms=tuple(d.get("synonyms", ())),
            infos=tuple(d.get("infos", ())),
            kind=d.get("kind", "entity"),
        )


@dataclass(frozen=True)
class EmbeddingConfig:
    provider: str = "hashing"
    dimension: int = 64
    url: str | None = None
    model: str | None = None
    api_key_env: str | None = None


@dataclass(frozen=True)
class KnowledgeGraphConfig:
    name: str
    endpoint: str
    prefixes: tuple[tuple[str, str], ...] = ()
    entity_data_path: Path | None = None
    property_data_path: Path | None = None
    example_store_path: Path | None = None
    entity_index_path: Path | None = None
    property_index_path: Path | None = None
    headers: tuple[tuple[str, str], ...] = ()

    @property
    def prefix_map(self) -> PrefixMap:
        return PrefixMap(self.prefixes)


@dataclass(frozen=True)
class Catalog:
    graphs: Mapping[str, KnowledgeGraphConfig]
    embedding: EmbeddingConfig | None = None
    path: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.graphs:
            raise CatalogError("catalog declares no graphs")

    def lookup(self, name: str) -> KnowledgeGraphConfig:
        try:
            return self.graphs[name]
        except KeyError:
            known = ", ".join(self.graphs)
            raise KeyError(f"unknown knowledge graph {name!r} (known: {known})") from None

    def names(self) -> list[str]:
        return list(self.graphs)

    def __contains__(self, name: str) -> bool:
        return name in self.graphs


class _UniqueKeyLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    seen = set()
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            raise CatalogError(f"duplicate key {key!r} (line {key_node.start_mark.line + 1})")
        seen.add(key)
    return yaml.SafeLoader.construct_mapping(loader, node, deep)


_UniqueKeyLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)

_TOP_KEYS = {"graphs", "embedding"}
_GRAPH_KEYS = {
    "name", "endpoint", "prefixes", "entity_data", "property_data", "examples",
    "entity_index", "property_index", "headers",
}
_EMBEDDING_KEYS = {"provider", "dimension", "url", "model", "api_key_env"}


def _reject_unknown(section: str, d: Mapping, allowed: set[str]) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise CatalogError(f"{section}: unknown field(s) {', '.join(unknown)}")


def _check_endpoint(name: str, endpoint) -> str:
    if not isinstance(endpoint, str):
        raise CatalogError(f"graph {name!r}: endpoint must be a string")
    parsed = urlparse(endpoint)
    if parsed.scheme not in ("http", "https") or not parsed.netloc:
        raise CatalogError(f"graph {name!r}: malformed endpoint URL {endpoint!r}")
    return endpoint


def _resolve(base: Path, value) -> Path | None:
    if value is None:
        return None
    p = Path(os.path.expanduser(str(value)))
    return p if p.is_absolute() else base / p


def _parse_prefixes(name: str, raw) -> tuple[tuple[str, str], ...]:
    if raw is None:
        return ()
    if isinstance(raw, Mapping):
        pairs = list(raw.items())
    elif isinstance(raw, list):
        pairs = []
        for entry in raw:
            if not (isinstance(entry, (list, tuple)) and len(entry) == 2):
                raise CatalogError(f"graph {name!r}: prefixes must be [name, iri] pairs")
            pairs.append(tuple(entry))
    else:
        raise CatalogError(f"graph {name!r}: prefixes must be a mapping or list of pairs")
    seen = set()
    for prefix, _ in pairs:
        if prefix in seen:
            raise CatalogError(f"graph {name!r}: duplicate prefix {prefix!r}")
        seen.add(prefix)
    return tuple((str(p), str(b)) for p, b in pairs)


def endpoint_env_var(name: str) -> str:
    """Environment variable that overrides the endpoint of graph ``name``."""
    return "KGSPARQL_ENDPOINT_" + "".join(c if c.isalnum() else "_" for c in name).upper()


def parse_catalog(data: Mapping, base_dir: Path, path: Path | None = None) -> Catalog:
    if not isinstance(data, Mapping):
        raise CatalogError("catalog must be a mapping")
    _reject_unknown("catalog", data, _TOP_KEYS)
    raw_graphs = data.get("graphs")
    if not raw_graphs or not isinstance(raw_graphs, list):
        raise CatalogError("catalog: 'graphs' must be a non-empty list")

    graphs: dict[str, KnowledgeGraphConfig] = {}
    for g in raw_graphs:
        if not isinstance(g, Mapping):
            raise CatalogError("catalog: each graph must be a mapping")
        _reject_unknown(f"graph {g.get('name', '?')!r}", g, _GRAPH_KEYS)
        name = g.get("name")
        if not name or not isinstance(name, str):
            raise CatalogError("graph without a name")
        if name in graphs:
            raise CatalogError(f"duplicate graph name {name!r}")
        headers = g.get("headers") or {}
        graphs[name] = KnowledgeGraphConfig(
            name=name,
            endpoint=_check_endpoint(name, os.environ.get(endpoint_env_var(name)) or g.get("endpoint")),
            prefixes=_parse_prefixes(name, g.get("prefixes")),
            entity_data_path=_resolve(base_dir, g.get("entity_data")),
            property_data_path=_resolve(base_dir, g.get("property_data")),
            example_store_path=_resolve(base_dir, g.get("examples")),
            entity_index_path=_resolve(base_dir, g.get("entity_index")),
            property_index_path=_resolve(base_dir, g.get("property_index")),
            headers=tuple((str(k), str(v)) for k, v in headers.items()),
        )

    embedding = None
    if data.get("embedding") is not None:
        raw = data["embedding"]
        _reject_unknown("embedding", raw, _EMBEDDING_KEYS)
        embedding = EmbeddingConfig(**raw)
    return Catalog(graphs=graphs, embedding=embedding, path=path)


def load_catalog(path: str | os.PathLike) -> Catalog:
    """Load a YAML catalog. Relative data paths resolve against the file's directory."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"catalog not found: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            data = yaml.load(f, Loader=_UniqueKeyLoader)
        except yaml.YAMLError as e:
            raise CatalogError(f"{path}: {e}") from e
    return parse_catalog(data, path.parent.resolve(), path)


def _split_list(cell: str) -> list[str]:
    return [part.strip() for part in cell.split(LIST_SEP) if part.strip()]


def _dedupe_aliases(label: str, synonyms: Iterable[str]) -> tuple[str, ...]:
    seen = {label}
    out = []
    for s in synonyms:
        if s not in seen:
            seen.add(s)
            out.append(s)
    return tuple(out)


def load_item_records(
    path: str | os.PathLike,
    kind: ItemKind = "entity",
    prefixes: PrefixMap | None = None,
) -> list[ItemRecord]:
    """Read an index dump (``iri, label, score, synonyms, infos``; one header line).

    Rows with an empty label are skipped and counted in a warning. Everything
    else that is malformed raises :class:`DataFormatError` with its line number.
    """
    prefixes = prefixes or PrefixMap()
    records: list[ItemRecord] = []
    seen_iris: set[str] = set()
    skipped = 0
    prev_score: int | None = None
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f, delimiter="\t", quoting=csv.QUOTE_NONE)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1:
                if len(row) != len(TSV_HEADER):
                    raise DataFormatError(path, 1, f"header must have {len(TSV_HEADER)} columns")
                continue
            if not row or row == [""]:
                continue
            if len(row) != len(TSV_HEADER):
                raise DataFormatError(path, lineno, f"expected 5 columns, got {len(row)}")
            raw_iri, label, raw_score, raw_syn, raw_infos = row
            try:
                score = int(raw_score.strip())
            except ValueError:
                raise DataFormatError(path, lineno, f"score is not an integer: {raw_score!r}") from None
            if score < 0 or score > MAX_SCORE:
                raise DataFormatError(path, lineno, f"score out of range: {score}")
            if prev_score is not None and score > prev_score:
                raise DataFormatError(
                    path, lineno, f"rows must be ordered by descending score ({score} after {prev_score})"
                )
            prev_score = score
            label = label.strip()
            if not label:
                skipped += 1
                continue
            try:
                iri = prefixes.expand(raw_iri)
            except ValueError as e:
                raise DataFormatError(path, lineno, str(e)) from None
            if iri in seen_iris:
                raise DataFormatError(path, lineno, f"duplicate IRI {iri}")
            seen_iris.add(iri)
            records.append(
                ItemRecord(
                    iri=iri,
                    label=label,
                    score=score,
                    synonyms=_dedupe_aliases(label, _split_list(raw_syn)),
                    infos=tuple(_split_list(raw_infos)),
                    kind=kind,
                )
            )
    if skipped:
        logger.warning("%s: skipped %d row(s) with empty label", path, skipped)
    return records


def write_item_records(
    records: Iterable[ItemRecord],
    path: str | os.PathLike,
    prefixes: PrefixMap | None = None,
) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\t".join(TSV_HEADER) + "\n")
        for r in records:
            iri = prefixes.shorten(r.iri) if prefixes else f"<{r.iri}>"
            cells = [iri, r.label, str(r.score), "; ".join(r.synonyms), "; ".join(r.infos)]
            f.write("\t".join(cells) + "\n")
