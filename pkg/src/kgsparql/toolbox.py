"""Functions the language model calls to search and query knowledge graphs.

Every function takes a ``kg`` name and returns a :class:`FunctionResult`
whose ``rendered`` text is what the model sees. Query failures and bad
arguments become model-visible text; only missing indices raise.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from kgsparql.catalog import Catalog, KnowledgeGraphConfig, load_item_records
from kgsparql.fewshot import ExamplePair, ExampleStore, load_example_pairs
from kgsparql.iris import PrefixMap, add_missing_prefixes, find_iris, local_name
from kgsparql.keyword_index import KeywordIndex, score_alias, tokenize
from kgsparql.sparql import (
    Cell,
    QueryError,
    ResultTable,
    SparqlClient,
    classify_query,
    render_cell,
    render_table,
    strip_comments,
    visible_cells,
)
from kgsparql.vector_index import EmbeddingProvider, VectorIndex, build_vector_index

logger = logging.getLogger(__name__)

TOP_K = 10
NUM_EXAMPLES = 3
LIST_LIMIT = 10
LIST_FETCH = 1000
LIST_PER_GROUP = 2
PROPERTY_CAP = 10_000
ENTITY_CAP = 100_000
LABEL_FETCH = 200
RDFS_LABEL = "http://www.w3.org/2000/01/rdf-schema#label"
APPROXIMATE_NOTE = "approximate (candidate set truncated)"


class ToolboxConfigError(RuntimeError):
    """A graph lacks an index or store a function needs. Not shown to the model."""


@dataclass(frozen=True)
class FunctionSpec:
    mnemonic: str
    name: str
    description: str
    parameters: Mapping[str, dict]
    required: tuple[str, ...]

    def tool_schema(self, kg_names: Sequence[str] = ()) -> dict:
        props = {}
        for pname, schema in self.parameters.items():
            schema = dict(schema)
            if pname == "kg" and kg_names:
                schema["enum"] = list(kg_names)
            props[pname] = schema
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": props,
                    "required": list(self.required),
                    "additionalProperties": False,
                },
            },
        }


_KG = {"type": "string", "description": "Name of the knowledge graph"}
_STR = {"type": "string"}

FUNCTION_SPECS: dict[str, FunctionSpec] = {
    spec.mnemonic: spec
    for spec in [
        FunctionSpec(
            "ANS", "answer",
            "Provide the final SPARQL query (sparql), the knowledge graph to run it on (kg) and a "
            "human-readable answer to the question (answer). Calling this function stops the generation.",
            {"kg": _KG, "sparql": _STR, "answer": _STR},
            ("kg", "sparql", "answer"),
        ),
        FunctionSpec(
            "CAN", "cancel",
            "Stop without a satisfactory SPARQL query. Give an explanation (expl) and optionally a "
            "best_attempt with the sparql and kg of your best query so far.",
            {
                "expl": _STR,
                "best_attempt": {
                    "type": "object",
                    "properties": {"sparql": _STR, "kg": _KG},
                    "required": ["sparql", "kg"],
                },
            },
            ("expl",),
        ),
        FunctionSpec(
            "EXE", "execute",
            "Execute a SPARQL query (sparql) over the knowledge graph (kg). Returns the result table, "
            "showing only the first and last five rows or columns of large results, or an error message.",
            {"kg": _KG, "sparql": _STR},
            ("kg", "sparql"),
        ),
        FunctionSpec(
            "LST", "list",
            "List up to 10 relevant and diverse triples from the knowledge graph (kg) matching the "
            "optional constraints on the subject (subj), property (prop) and object (obj) positions.",
            {"kg": _KG, "subj": _STR, "prop": _STR, "obj": _STR},
            ("kg",),
        ),
        FunctionSpec(
            "SEN", "search_entity",
            "Search for entities in the knowledge graph (kg) with a keyword query (query). "
            "Returns the top 10 matches.",
            {"kg": _KG, "query": _STR},
            ("kg", "query"),
        ),
        FunctionSpec(
            "SPR", "search_property",
            "Search for properties in the knowledge graph (kg) similar to the query (query). "
            "Returns the top 10 matches.",
            {"kg": _KG, "query": _STR},
            ("kg", "query"),
        ),
        FunctionSpec(
            "SPE", "search_property_of_entity",
            "Like search_property with query (query) on the knowledge graph (kg), but only among "
            "properties the entity (ent) has.",
            {"kg": _KG, "query": _STR, "ent": _STR},
            ("kg", "query", "ent"),
        ),
        FunctionSpec(
            "SOP", "search_object_of_property",
            "Like search_entity with query (query) on the knowledge graph (kg), but only among entities "
            "and literals that occur as objects of the property (prop).",
            {"kg": _KG, "query": _STR, "prop": _STR},
            ("kg", "query", "prop"),
        ),
        FunctionSpec(
            "SAC", "search_autocomplete",
            "Search the knowledge graph (kg) for items matching the query (query) that fit the position "
            "of the variable ?search in the given SELECT query (sparql).",
            {"kg": _KG, "query": _STR, "sparql": _STR},
            ("kg", "query", "sparql"),
        ),
        FunctionSpec(
            "SCN", "search_constrained",
            "Search the knowledge graph (kg) with the query (query) for items at the position (pos) of "
            "triples matching the optional constraints (constraints) on subj, prop and obj.",
            {
                "kg": _KG,
                "query": _STR,
                "pos": {"type": "string", "enum": ["subj", "prop", "obj"]},
                "constraints": {
                    "type": "object",
                    "properties": {"subj": _STR, "prop": _STR, "obj": _STR},
                },
            },
            ("kg", "query", "pos"),
        ),
        FunctionSpec(
            "FSE", "find_similar_examples",
            "Find question-SPARQL example pairs for the knowledge graph (kg) whose questions are most "
            "similar to the given question (question).",
            {"kg": _KG, "question": _STR},
            ("kg", "question"),
        ),
        FunctionSpec(
            "FEX", "find_examples",
            "Return randomly selected question-SPARQL example pairs for the knowledge graph (kg).",
            {"kg": _KG},
            ("kg",),
        ),
    ]
}

NAME_TO_MNEMONIC = {spec.name: m for m, spec in FUNCTION_SPECS.items()}


def tool_schemas(mnemonics: Iterable[str], kg_names: Sequence[str] = ()) -> list[dict]:
    order = list(FUNCTION_SPECS)
    return [FUNCTION_SPECS[m].tool_schema(kg_names) for m in sorted(set(mnemonics), key=order.index)]


@dataclass
class FunctionResult:
    rendered: str
    structured: Any = None
    mentioned_iris: frozenset[str] = frozenset()
    error: bool = False

    @classmethod
    def failure(cls, message: str) -> "FunctionResult":
        return cls(message, error=True)


@dataclass
class GraphResources:
    entity_index: KeywordIndex | None = None
    property_index: VectorIndex | None = None
    examples: ExampleStore | None = None


@dataclass
class Ranked:
    """One search hit. ``cell`` is an IRI or literal; ``norm`` in [0, 1] orders merges."""

    cell: Cell
    label: str
    norm: float
    raw: float
    popularity: int = 0
    infos: tuple[str, ...] = ()

    @property
    def key(self) -> str:
        return self.cell.lexical

    def sort_key(self):
        return (-self.norm, -self.popularity, self.key)


@dataclass
class _Term:
    text: str
    iri: str | None = None


class _ArgError(ValueError):
    pass


def load_resources(
    catalog: Catalog,
    provider: EmbeddingProvider | None = None,
) -> dict[str, GraphResources]:
    """Open or build the indices each catalog graph declares."""
    out = {}
    for name, kg in catalog.graphs.items():
        res = GraphResources()
        if kg.entity_index_path and kg.entity_index_path.exists():
            res.entity_index = KeywordIndex.load(kg.entity_index_path)
        elif kg.entity_data_path:
            res.entity_index = KeywordIndex.build(load_item_records(kg.entity_data_path, "entity", kg.prefix_map))
        if kg.property_index_path and kg.property_index_path.exists():
            res.property_index = VectorIndex.load(kg.property_index_path)
        elif kg.property_data_path:
            if provider is None:
                raise ToolboxConfigError(f"graph {name!r}: property data needs an embedding provider")
            records = load_item_records(kg.property_data_path, "property", kg.prefix_map)
            res.property_index = build_vector_index(records, provider)
        if kg.example_store_path:
            if provider is None:
                raise ToolboxConfigError(f"graph {name!r}: example store needs an embedding provider")
            res.examples = ExampleStore(load_example_pairs(kg.example_store_path, name), provider)
        out[name] = res
    return out


class Toolbox:
    """Stateless over immutable indices; safe to share between concurrent sessions."""

    def __init__(
        self,
        catalog: Catalog,
        client: SparqlClient,
        resources: Mapping[str, GraphResources] | None = None,
        provider: EmbeddingProvider | None = None,
        k: int = TOP_K,
        shots: int = NUM_EXAMPLES,
    ):
        self.catalog = catalog
        self.client = client
        self.resources = dict(resources or {})
        self.provider = provider
        self.k = k
        self.shots = shots

    # plumbing

    def _kg(self, kg: str) -> KnowledgeGraphConfig:
        if kg not in self.catalog:
            raise _ArgError(f"unknown knowledge graph {kg!r}, available: {', '.join(self.catalog.names())}")
        return self.catalog.lookup(kg)

    def _res(self, kg: str) -> GraphResources:
        return self.resources.get(kg) or GraphResources()

    def _entity_index(self, kg: str) -> KeywordIndex:
        idx = self._res(kg).entity_index
        if idx is None:
            raise ToolboxConfigError(f"graph {kg!r} has no entity index")
        return idx

    def _property_index(self, kg: str) -> VectorIndex:
        idx = self._res(kg).property_index
        if idx is None or self.provider is None:
            raise ToolboxConfigError(f"graph {kg!r} has no property index or embedding provider")
        return idx

    def prefixes(self, kg: str) -> PrefixMap:
        return self.catalog.lookup(kg).prefix_map

    def _term(self, kg: str, value: str, what: str, iri_only: bool = True) -> _Term:
        value = value.strip()
        pm = self.prefixes(kg)
        try:
            iri = pm.expand(value)
            return _Term(f"<{iri}>", iri)
        except ValueError:
            pass
        if not iri_only:
            if re.fullmatch(r"\"(?:[^\"\\]|\\.)*\"(?:@[A-Za-z\-]+|\^\^\S+)?|'(?:[^'\\]|\\.)*'(?:@[A-Za-z\-]+)?",
                            value):
                return _Term(value)
            if re.fullmatch(r"[+-]?\d+(\.\d+)?([eE][+-]?\d+)?|true|false", value):
                return _Term(value)
        kind = "IRI" if iri_only else "IRI or literal"
        raise _ArgError(f"invalid {what}: {value!r} is not a valid {kind}")

    def _fetch(self, kg: str, sparql: str) -> ResultTable:
        cfg = self._kg(kg)
        return self.client.execute(cfg, add_missing_prefixes(sparql, cfg.prefix_map))

    def _label_of(self, kg: str, iri: str) -> tuple[str | None, int, tuple[str, ...]]:
        res = self._res(kg)
        for idx in (res.entity_index, res.property_index):
            if idx is not None:
                rec = idx.get(iri)
                if rec is not None:
                    return rec.label, rec.score, rec.infos
        return None, 0, ()

    def call(self, name: str, args: Mapping[str, Any], rng: random.Random | None = None) -> FunctionResult:
        """Dispatch a model tool call by function name."""
        mnemonic = NAME_TO_MNEMONIC.get(name)
        if mnemonic is None or mnemonic in ("ANS", "CAN"):
            return FunctionResult.failure(f"error: unknown function {name!r}")
        spec = FUNCTION_SPECS[mnemonic]
        missing = [p for p in spec.required if args.get(p) is None]
        if missing:
            return FunctionResult.failure(f"error: missing argument(s) {', '.join(missing)} for {name}")
        unknown = sorted(set(args) - set(spec.parameters))
        if unknown:
            return FunctionResult.failure(f"error: unknown argument(s) {', '.join(unknown)} for {name}")
        kwargs = dict(args)
        if mnemonic == "FEX":
            kwargs["rng"] = rng or random.Random(0)
        method = getattr(self, "fn_" + {
            "EXE": "execute", "LST": "list", "SEN": "search_entity", "SPR": "search_property",
            "SPE": "search_property_of_entity", "SOP": "search_object_of_property",
            "SAC": "search_autocomplete", "SCN": "search_constrained",
            "FSE": "find_similar_examples", "FEX": "find_examples",
        }[mnemonic])
        return method(**kwargs)

    # EXE

    def fn_execute(self, kg: str, sparql: str) -> FunctionResult:
        try:
            cfg = self._kg(kg)
            table = self.client.execute(cfg, add_missing_prefixes(sparql, cfg.prefix_map))
        except _ArgError as e:
            return FunctionResult.failure(f"error: {e}")
        except QueryError as e:
            return FunctionResult.failure(f"{e.kind} error: {e.message}")
        pm = cfg.prefix_map
        mentioned = set()
        for c in visible_cells(table):
            if c.kind == "iri":
                mentioned.add(c.lexical)
            elif c.kind == "literal" and c.datatype and not c.lang and render_cell(c, pm).count("^^"):
                mentioned.add(c.datatype)
        return FunctionResult(render_table(table, pm), table, frozenset(mentioned))

    # LST

    def fn_list(self, kg: str, subj: str | None = None, prop: str | None = None,
                obj: str | None = None) -> FunctionResult:
        try:
            self._kg(kg)
            terms = {
                "s": self._term(kg, subj, "subject") if subj else None,
                "p": self._term(kg, prop, "property") if prop else None,
                "o": self._term(kg, obj, "object", iri_only=False) if obj else None,
            }
        except _ArgError as e:
            return FunctionResult.failure(f"error: {e}")
        pattern = " ".join(t.text if t else f"?{v}" for v, t in terms.items())
        free = [v for v, t in terms.items() if t is None]
        try:
            if not free:
                table = self._fetch(kg, f"ASK WHERE {{ {pattern} }}")
                if not table.ask_value:
                    return FunctionResult("no triples found", [])
                triple = [Cell.iri(terms[v].iri) if terms[v].iri else Cell.literal(terms[v].text) for v in "spo"]
                rendered, mentioned = self._render_triples(kg, [triple])
                return FunctionResult(rendered + "\n1 triple", [triple], mentioned)
            table = self._fetch(
                kg, f"SELECT {' '.join('?' + v for v in free)} WHERE {{ {pattern} }} LIMIT {LIST_FETCH}"
            )
        except QueryError as e:
            return FunctionResult.failure(f"{e.kind} error: {e.message}")
        triples = []
        for row in table.rows:
            values = dict(zip(free, row))
            triples.append([
                values[v] if v in values else (Cell.iri(terms[v].iri) if terms[v].iri else _literal_cell(terms[v].text))
                for v in "spo"
            ])
        if not triples:
            return FunctionResult("no triples found", [])
        chosen = self.diverse_triples(kg, triples, free)
        rendered, mentioned = self._render_triples(kg, chosen)
        total = f"at least {table.total_rows}" if table.total_rows >= LIST_FETCH else str(table.total_rows)
        rendered += f"\nshowing {len(chosen)} of {total} triples"
        return FunctionResult(rendered, chosen, mentioned)

    def _popularity(self, kg: str, cell: Cell) -> int:
        if cell.kind != "iri":
            return 0
        return self._label_of(kg, cell.lexical)[1]

    def diverse_triples(self, kg: str, triples: list[list[Cell]], free: Sequence[str]) -> list[list[Cell]]:
        """Pick at most 10 triples, at most two per group, round-robin over groups.

        Triples are grouped by property when the property is free, otherwise by
        the free subject (or object). Groups and members are visited by
        descending popularity, with fetch order breaking ties.
        """
        pos = {"s": 0, "p": 1, "o": 2}
        group_pos = pos["p"] if "p" in free else pos[free[0]]
        member_pos = [pos[v] for v in free if pos[v] != group_pos]
        groups: dict[Cell, list[tuple[int, list[Cell]]]] = {}
        for i, t in enumerate(triples):
            groups.setdefault(t[group_pos], []).append((i, t))
        ordered_groups = sorted(
            groups.items(),
            key=lambda kv: (-self._popularity(kg, kv[0]), kv[1][0][0]),
        )
        members = []
        for _, ms in ordered_groups:
            ms = sorted(ms, key=lambda it: (-sum(self._popularity(kg, it[1][p]) for p in member_pos), it[0]))
            members.append([t for _, t in ms[:LIST_PER_GROUP]])
        chosen: list[list[Cell]] = []
        for r in range(LIST_PER_GROUP):
            for ms in members:
                if r < len(ms) and len(chosen) < LIST_LIMIT:
                    chosen.append(ms[r])
        return chosen

    def _render_item(self, kg: str, cell: Cell, pm: PrefixMap) -> tuple[str, set[str]]:
        if cell.kind != "iri":
            return render_cell(cell, pm), set()
        label = self._label_of(kg, cell.lexical)[0]
        short = pm.shorten(cell.lexical)
        text = f"{label} ({short})" if label else short
        return text.replace("|", "\\|"), {cell.lexical}

    def _render_triples(self, kg: str, triples: list[list[Cell]]) -> tuple[str, frozenset[str]]:
        pm = self.prefixes(kg)
        lines = ["| subject | property | object |", "|---|---|---|"]
        mentioned: set[str] = set()
        for t in triples:
            cells = []
            for c in t:
                text, iris = self._render_item(kg, c, pm)
                cells.append(text)
                mentioned |= iris
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines), frozenset(mentioned)

    # rendering of search hits

    def _render_hits(self, kg: str, hits: Sequence[Ranked], approximate: bool = False) -> FunctionResult:
        if not hits:
            text = "no results"
            return FunctionResult(text + (f"\n{APPROXIMATE_NOTE}" if approximate else ""), [])
        pm = self.prefixes(kg)
        lines = []
        mentioned = set()
        for rank, h in enumerate(hits, start=1):
            if h.cell.kind == "iri":
                line = f"{rank}. {h.label} ({pm.shorten(h.cell.lexical)})"
                mentioned.add(h.cell.lexical)
                if h.infos:
                    line += " - " + "; ".join(h.infos[:3])
            else:
                rendered = render_cell(h.cell, pm)
                line = f"{rank}. {rendered} (literal)"
                if "^^" in rendered:
                    mentioned.add(h.cell.datatype)
            lines.append(line)
        if approximate:
            lines.append(APPROXIMATE_NOTE)
        return FunctionResult("\n".join(lines), list(hits), frozenset(mentioned))

    # scorers shared by the search functions

    def _keyword_ranked(self, kg: str, query: str, iris: Iterable[str] | None, k: int) -> tuple[list[Ranked], bool]:
        idx = self._entity_index(kg)
        n = max(len(tokenize(query)), 1)
        hits = idx.search(query, k=k, restrict_to=iris)
        return [
            Ranked(Cell.iri(h.item.iri), h.item.label, h.match_score / (2 * n), h.match_score,
                   h.item.score, h.item.infos)
            for h in hits
        ], hits.approximate

    def _literal_ranked(self, query: str, literals: Iterable[Cell], k: int) -> list[Ranked]:
        q = tokenize(query)
        n = max(len(q), 1)
        out = []
        for c in set(literals):
            s = score_alias(q, tokenize(c.lexical))
            if s > 0:
                out.append(Ranked(c, c.lexical, s / (2 * n), s))
        out.sort(key=Ranked.sort_key)
        return out[:k]

    def _similarity_ranked(self, kg: str, query: str, iris: Iterable[str] | None, k: int) -> list[Ranked]:
        idx = self._property_index(kg)
        hits = idx.search(query, self.provider, k=k, restrict_to=iris)
        return [
            Ranked(Cell.iri(h.item.iri), h.item.label, (h.match_score + 1.0) / 2, h.match_score,
                   h.item.score, h.item.infos)
            for h in hits
        ]

    def _fetch_labels(self, kg: str, iris: Sequence[str]) -> dict[str, str]:
        if not iris:
            return {}
        values = " ".join(f"<{i}>" for i in iris[:LABEL_FETCH])
        sparql = f"SELECT ?x ?label WHERE {{ VALUES ?x {{ {values} }} ?x <{RDFS_LABEL}> ?label }}"
        try:
            table = self._fetch(kg, sparql)
        except QueryError as e:
            logger.info("label lookup failed on %s: %s", kg, e)
            return {}
        labels: dict[str, str] = {}
        preferred: set[str] = set()
        for x, label in table.rows:
            if x.kind != "iri" or label.kind != "literal":
                continue
            # English or untagged labels win over other languages
            is_pref = label.lang in (None, "", "en")
            if x.lexical not in labels or (is_pref and x.lexical not in preferred):
                labels[x.lexical] = label.lexical
                if is_pref:
                    preferred.add(x.lexical)
        return labels

    def _rank_properties(self, kg: str, query: str, iris: Sequence[str], k: int) -> list[Ranked]:
        idx = self._res(kg).property_index
        in_index = [i for i in iris if idx is not None and i in idx]
        missing = [i for i in iris if idx is None or i not in idx]
        ranked = self._similarity_ranked(kg, query, in_index, k) if in_index else []
        if missing:
            labels = self._fetch_labels(kg, missing)
            q = tokenize(query)
            n = max(len(q), 1)
            fallback = []
            for iri in missing:
                label = labels.get(iri) or local_name(iri)
                s = score_alias(q, tokenize(label))
                fallback.append(Ranked(Cell.iri(iri), label, s / (2 * n), s))
            fallback.sort(key=Ranked.sort_key)
            ranked += fallback[:k]
        ranked.sort(key=Ranked.sort_key)
        return ranked[:k]

    def _rank_objects(self, kg: str, query: str, cells: Sequence[Cell], k: int) -> list[Ranked]:
        iris = [c.lexical for c in cells if c.kind == "iri"]
        literals = [c for c in cells if c.kind == "literal"]
        ranked = self._keyword_ranked(kg, query, iris, k)[0] if iris else []
        ranked += self._literal_ranked(query, literals, k)
        ranked.sort(key=Ranked.sort_key)
        return ranked[:k]

    def _distinct(self, kg: str, sparql: str, cap: int) -> tuple[list[Cell], bool]:
        table = self._fetch(kg, f"{sparql} LIMIT {cap + 1}")
        cells = [r[0] for r in table.rows if r and r[0].kind != "unbound"]
        truncated = len(cells) > cap or table.truncated
        return cells[:cap], truncated

    # SEN / SPR

    def fn_search_entity(self, kg: str, query: str) -> FunctionResult:
        try:
            self._kg(kg)
        except _ArgError as e:
            return FunctionResult.failure(f"error: {e}")
        ranked, approximate = self._keyword_ranked(kg, query, None, self.k)
        return self._render_hits(kg, ranked, approximate)

    def fn_search_property(self, kg: str, query: str) -> FunctionResult:
        try:
            self._kg(kg)
        except _ArgError as e:
            return FunctionResult.failure(f"error: {e}")
        return self._render_hits(kg, self._similarity_ranked(kg, query, None, self.k))

    # SPE / SOP

    def fn_search_property_of_entity(self, kg: str, query: str, ent: str) -> FunctionResult:
        try:
            self._kg(kg)
            term = self._term(kg, ent, "entity")
            cells, truncated = self._distinct(kg, f"SELECT DISTINCT ?p WHERE {{ {term.text} ?p ?o }}", PROPERTY_CAP)
        except _ArgError as e:
            return FunctionResult.failure(f"error: {e}")
        except QueryError as e:
            return FunctionResult.failure(f"{e.kind} error: {e.message}")
        iris = [c.lexical for c in cells if c.kind == "iri"]
        if not iris:
            return FunctionResult("entity has no properties", [])
        return self._render_hits(kg, self._rank_properties(kg, query, iris, self.k), truncated)

    def fn_search_object_of_property(self, kg: str, query: str, prop: str) -> FunctionResult:
        try:
            self._kg(kg)
            term = self._term(kg, prop, "property")
            cells, truncated = self._distinct(kg, f"SELECT DISTINCT ?o WHERE {{ ?s {term.text} ?o }}", ENTITY_CAP)
        except _ArgError as e:
            return FunctionResult.failure(f"error: {e}")
        except QueryError as e:
            return FunctionResult.failure(f"{e.kind} error: {e.message}")
        if not cells:
            return FunctionResult("no objects for property", [])
        return self._render_hits(kg, self._rank_objects(kg, query, cells, self.k), truncated)

    # SAC

    def fn_search_autocomplete(self, kg: str, query: str, sparql: str) -> FunctionResult:
        try:
            self._kg(kg)
            rewritten = rewrite_autocomplete(sparql, ENTITY_CAP + 1)
            table = self._fetch(kg, rewritten)
        except _ArgError as e:
            return FunctionResult.failure(f"error: {e}")
        except QueryError as e:
            return FunctionResult.failure(f"{e.kind} error: {e.message}")
        cells = [r[0] for r in table.rows if r and r[0].kind in ("iri", "literal")]
        truncated = len(cells) > ENTITY_CAP or table.truncated
        cells = cells[:ENTITY_CAP]
        res = self._res(kg)
        prop_iris = [c.lexical for c in cells
                     if c.kind == "iri" and res.property_index is not None and c.lexical in res.property_index]
        prop_set = set(prop_iris)
        ent_iris = [c.lexical for c in cells if c.kind == "iri" and c.lexical not in prop_set
                    and res.entity_index is not None and c.lexical in res.entity_index]
        literals = [c for c in cells if c.kind == "literal"]
        ranked: list[Ranked] = []
        if prop_iris and self.provider is not None:
            ranked += self._similarity_ranked(kg, query, prop_iris, self.k)
        if ent_iris:
            ranked += self._keyword_ranked(kg, query, ent_iris, self.k)[0]
        ranked += self._literal_ranked(query, literals, self.k)
        ranked.sort(key=Ranked.sort_key)
        return self._render_hits(kg, ranked[:self.k], truncated)

    # SCN

    def fn_search_constrained(self, kg: str, query: str, pos: str,
                              constraints: Mapping[str, str] | None = None) -> FunctionResult:
        constraints = {k: v for k, v in (constraints or {}).items() if v}
        try:
            self._kg(kg)
            if pos not in ("subj", "prop", "obj"):
                raise _ArgError(f"pos must be one of subj, prop, obj, got {pos!r}")
            unknown = set(constraints) - {"subj", "prop", "obj"}
            if unknown:
                raise _ArgError(f"unknown constraint(s) {', '.join(sorted(unknown))}")
            if pos in constraints:
                raise _ArgError(f"the searched position {pos} must not be constrained")
        except _ArgError as e:
            return FunctionResult.failure(f"error: {e}")
        if not constraints:
            if pos == "prop":
                return self.fn_search_property(kg, query)
            return self.fn_search_entity(kg, query)
        try:
            parts = []
            for p, var in (("subj", "?s"), ("prop", "?p"), ("obj", "?o")):
                if p == pos:
                    parts.append("?x")
                elif p in constraints:
                    parts.append(self._term(kg, constraints[p], p, iri_only=(p != "obj")).text)
                else:
                    parts.append(var)
            cap = PROPERTY_CAP if pos == "prop" else ENTITY_CAP
            cells, truncated = self._distinct(kg, f"SELECT DISTINCT ?x WHERE {{ {' '.join(parts)} }}", cap)
        except _ArgError as e:
            return FunctionResult.failure(f"error: {e}")
        except QueryError as e:
            return FunctionResult.failure(f"{e.kind} error: {e.message}")
        if not cells:
            return FunctionResult("no results", [])
        if pos == "prop":
            iris = [c.lexical for c in cells if c.kind == "iri"]
            ranked = self._rank_properties(kg, query, iris, self.k)
        else:
            ranked = self._rank_objects(kg, query, cells, self.k)
        return self._render_hits(kg, ranked, truncated)

    # FSE / FEX

    def _examples(self, kg: str) -> ExampleStore | None:
        return self._res(kg).examples

    def _render_examples(self, kg: str, pairs: Sequence[ExamplePair]) -> FunctionResult:
        if not pairs:
            return FunctionResult("no examples available", [])
        pm = self.prefixes(kg)
        blocks = []
        mentioned: set[str] = set()
        for i, p in enumerate(pairs, start=1):
            blocks.append(f"Example {i}\nQuestion: {p.question}\nSPARQL:\n{p.sparql}")
            mentioned |= find_iris(p.sparql, pm, sparql=True)
        return FunctionResult("\n\n".join(blocks), list(pairs), frozenset(mentioned))

    def fn_find_similar_examples(self, kg: str, question: str) -> FunctionResult:
        try:
            self._kg(kg)
        except _ArgError as e:
            return FunctionResult.failure(f"error: {e}")
        store = self._examples(kg)
        if store is None or not len(store):
            return FunctionResult("no examples available", [])
        return self._render_examples(kg, store.similar(question, self.shots))

    def fn_find_examples(self, kg: str, rng: random.Random) -> FunctionResult:
        try:
            self._kg(kg)
        except _ArgError as e:
            return FunctionResult.failure(f"error: {e}")
        store = self._examples(kg)
        if store is None or not len(store):
            return FunctionResult("no examples available", [])
        return self._render_examples(kg, store.sample(rng, self.shots))


def _literal_cell(text: str) -> Cell:
    m = re.fullmatch(r"([\"'])(.*)\1(?:@([A-Za-z\-]+)|\^\^<?([^>]*)>?)?", text, re.S)
    if m:
        return Cell.literal(m.group(2), m.group(4), m.group(3))
    return Cell.literal(text)


_SELECT_CLAUSE = re.compile(r"\bSELECT\b(.*?)(?=\bWHERE\b|\{)", re.I | re.S)


def rewrite_autocomplete(sparql: str, limit: int) -> str:
    """Project ``?search`` distinctly and cap the result, leaving the body untouched.

    The original query becomes a subquery so that existing solution modifiers
    stay valid; the prologue is kept outermost.
    """
    if classify_query(sparql) != "select":
        raise _ArgError("query must be a SELECT query")
    text = strip_comments(sparql)
    m = _SELECT_CLAUSE.search(text)
    if not m:
        raise _ArgError("query must be a SELECT query")
    body = text[m.end():]
    if not re.search(r"\?search\b", body):
        raise _ArgError("query must contain variable ?search")
    prologue = text[:m.start()].strip()
    inner = f"SELECT DISTINCT ?search {body.strip()}"
    query = f"SELECT DISTINCT ?search WHERE {{ {{ {inner} }} }} LIMIT {limit}"
    return f"{prologue}\n{query}" if prologue else query
