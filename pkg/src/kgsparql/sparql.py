"""SPARQL-over-HTTP client and bounded text rendering of result tables."""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field
from typing import Literal

import requests

from kgsparql.catalog import KnowledgeGraphConfig
from kgsparql.iris import PrefixMap

DEFAULT_TIMEOUT = 60.0
DEFAULT_ROW_CAP = 100_000
SHOW_EDGE = 5
SHOW_MAX = 10
ELLIPSIS = "…"

XSD = "http://www.w3.org/2001/XMLSchema#"
RDF_LANGSTRING = "http://www.w3.org/1999/02/22-rdf-syntax-ns#langString"

CellKind = Literal["iri", "literal", "blank", "unbound"]
QueryKind = Literal["select", "ask", "construct", "describe", "update", "unknown"]


class QueryError(Exception):
    """Failed query. ``kind`` is one of timeout, endpoint_http, parse, malformed_query."""

    def __init__(self, kind: str, message: str):
        message = message.strip() or kind.replace("_", " ")
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.message = message


@dataclass(frozen=True)
class Cell:
    kind: CellKind
    lexical: str = ""
    datatype: str | None = None
    lang: str | None = None

    @classmethod
    def iri(cls, value: str) -> "Cell":
        return cls("iri", value)

    @classmethod
    def literal(cls, value: str, datatype: str | None = None, lang: str | None = None) -> "Cell":
        return cls("literal", value, datatype, lang)

    @classmethod
    def unbound(cls) -> "Cell":
        return cls("unbound")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind, "lexical": self.lexical}
        if self.datatype:
            d["datatype"] = self.datatype
        if self.lang:
            d["lang"] = self.lang
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Cell":
        return cls(d["kind"], d.get("lexical", ""), d.get("datatype"), d.get("lang"))


@dataclass
class ResultTable:
    variables: list[str] = field(default_factory=list)
    rows: list[list[Cell]] = field(default_factory=list)
    total_rows: int = 0
    total_cols: int = 0
    truncated: bool = False
    is_ask: bool = False
    ask_value: bool | None = None

    @classmethod
    def select(cls, variables: list[str], rows: list[list[Cell]]) -> "ResultTable":
        return cls(list(variables), [list(r) for r in rows], len(rows), len(variables))

    @classmethod
    def ask(cls, value: bool) -> "ResultTable":
        return cls(is_ask=True, ask_value=value)

    @property
    def is_empty(self) -> bool:
        return not self.is_ask and self.total_rows == 0

    def column(self, name: str) -> list[Cell]:
        i = self.variables.index(name)
        return [r[i] for r in self.rows]

    def to_dict(self) -> dict:
        return {
            "variables": self.variables,
            "rows": [[c.to_dict() for c in r] for r in self.rows],
            "total_rows": self.total_rows,
            "total_cols": self.total_cols,
            "truncated": self.truncated,
            "is_ask": self.is_ask,
            "ask_value": self.ask_value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResultTable":
        return cls(
            variables=list(d["variables"]),
            rows=[[Cell.from_dict(c) for c in r] for r in d["rows"]],
            total_rows=d["total_rows"],
            total_cols=d["total_cols"],
            truncated=d["truncated"],
            is_ask=d["is_ask"],
            ask_value=d["ask_value"],
        )


_PROLOGUE = re.compile(r"^\s*(?:(?:PREFIX\s+[^\s:]*:\s*<[^>]*>|BASE\s*<[^>]*>)\s*)*", re.I)
_LINE_COMMENT = re.compile(r"(?m)(^|\s)#[^\n]*")
_UPDATE_KEYWORDS = ("INSERT", "DELETE", "LOAD", "CLEAR", "CREATE", "DROP", "COPY", "MOVE", "ADD", "WITH")


def strip_comments(sparql: str) -> str:
    return _LINE_COMMENT.sub(r"\1", sparql)


def classify_query(sparql: str) -> QueryKind:
    """Leading keyword after the prologue. Comments are ignored."""
    body = _PROLOGUE.sub("", strip_comments(sparql), count=1)
    m = re.match(r"\s*([A-Za-z]+)", body)
    if not m:
        return "unknown"
    word = m.group(1).upper()
    if word in ("SELECT", "ASK", "CONSTRUCT", "DESCRIBE"):
        return word.lower()  # type: ignore[return-value]
    if word in _UPDATE_KEYWORDS:
        return "update"
    return "unknown"


def check_braces(sparql: str) -> bool:
    """Balanced ``{}`` outside of IRIs, strings and comments."""
    depth = 0
    i, n = 0, len(sparql)
    while i < n:
        c = sparql[i]
        if c in "\"'":
            triple = sparql[i:i + 3] == c * 3
            end = sparql.find(c * 3, i + 3) if triple else i + 1
            if not triple:
                while end < n and sparql[end] != c:
                    end += 2 if sparql[end] == "\\" else 1
            if end < 0 or end >= n:
                return False
            i = end + (3 if triple else 1)
            continue
        if c == "<":
            # IRI refs never contain whitespace; a comparison operator is followed by one
            m = re.match(r"<[^<>\s\"{}|^`]*>", sparql[i:])
            if m:
                i += m.end()
                continue
        if c == "#":
            nl = sparql.find("\n", i)
            i = n if nl < 0 else nl
            continue
        if c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth < 0:
                return False
        i += 1
    return depth == 0


def _parse_cell(binding: dict | None) -> Cell:
    if binding is None:
        return Cell.unbound()
    kind = binding.get("type")
    value = binding.get("value", "")
    if kind == "uri":
        return Cell.iri(value)
    if kind in ("literal", "typed-literal"):
        return Cell.literal(value, binding.get("datatype"), binding.get("xml:lang"))
    if kind == "bnode":
        return Cell("blank", value)
    raise QueryError("parse", f"unknown binding type {kind!r}")


def parse_results_json(payload: str | bytes, row_cap: int = DEFAULT_ROW_CAP) -> ResultTable:
    """Parse a SPARQL 1.1 JSON results document."""
    try:
        data = json.loads(payload)
    except (ValueError, UnicodeDecodeError) as e:
        raise QueryError("parse", f"response is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise QueryError("parse", "response is not a JSON object")
    if "boolean" in data:
        return ResultTable.ask(bool(data["boolean"]))
    try:
        variables = list(data["head"]["vars"])
        bindings = data["results"]["bindings"]
    except (KeyError, TypeError):
        raise QueryError("parse", "response lacks head.vars or results.bindings") from None
    rows = [[_parse_cell(b.get(v)) for v in variables] for b in bindings[:row_cap]]
    return ResultTable(
        variables=variables,
        rows=rows,
        total_rows=len(bindings),
        total_cols=len(variables),
        truncated=len(bindings) > len(rows),
    )


def _env_timeout() -> float | None:
    raw = os.environ.get("KGSPARQL_TIMEOUT")
    return float(raw) if raw else None


class SparqlClient:
    """Executes queries against SPARQL 1.1 endpoints over HTTP POST.

    Holds only a connection pool, so one instance can be shared between threads.
    """

    grace = 2.0

    def __init__(self, timeout: float | None = None, row_cap: int = DEFAULT_ROW_CAP, session=None):
        self.timeout = timeout if timeout is not None else (_env_timeout() or DEFAULT_TIMEOUT)
        self.row_cap = row_cap
        self._session = session or requests.Session()

    def execute(
        self,
        kg: KnowledgeGraphConfig,
        sparql: str,
        timeout: float | None = None,
        row_cap: int | None = None,
    ) -> ResultTable:
        if not sparql or not sparql.strip():
            raise QueryError("malformed_query", "query is empty")
        kind = classify_query(sparql)
        if kind == "update":
            raise QueryError("malformed_query", "update queries are not allowed")
        if not check_braces(sparql):
            raise QueryError("malformed_query", "unbalanced braces in query")
        timeout = self.timeout if timeout is None else timeout
        row_cap = self.row_cap if row_cap is None else row_cap
        accept = "application/sparql-results+json"
        if kind in ("construct", "describe"):
            raise QueryError("malformed_query", f"{kind.upper()} queries are not supported, use SELECT or ASK")
        headers = {"Accept": accept, "User-Agent": "kgsparql/0.1", **dict(kg.headers)}
        deadline = time.monotonic() + timeout
        try:
            resp = self._session.post(
                kg.endpoint,
                data={"query": sparql},
                headers=headers,
                timeout=(min(timeout, 10.0), timeout),
                stream=True,
            )
            chunks = []
            for chunk in resp.iter_content(chunk_size=65536):
                chunks.append(chunk)
                if time.monotonic() > deadline:
                    resp.close()
                    raise QueryError("timeout", f"query timed out after {timeout:g} seconds")
            body = b"".join(chunks)
        except requests.Timeout:
            raise QueryError("timeout", f"query timed out after {timeout:g} seconds") from None
        except requests.RequestException as e:
            raise QueryError("endpoint_http", f"request failed: {e}") from None
        if resp.status_code >= 400:
            message = body.decode("utf-8", errors="replace").strip()
            try:
                data = json.loads(message)
                if isinstance(data, dict):
                    message = str(data.get("exception") or data.get("message") or data.get("error") or message)
            except ValueError:
                pass
            raise QueryError("endpoint_http", f"HTTP {resp.status_code}: {message or resp.reason}")
        return parse_results_json(body, row_cap=row_cap)


_default_client: SparqlClient | None = None


def execute_sparql(kg: KnowledgeGraphConfig, sparql: str, timeout: float = DEFAULT_TIMEOUT) -> ResultTable:
    global _default_client
    if _default_client is None:
        _default_client = SparqlClient()
    return _default_client.execute(kg, sparql, timeout=timeout)


def render_cell(cell: Cell, prefixes: PrefixMap | None = None) -> str:
    if cell.kind == "unbound":
        return ""
    if cell.kind == "iri":
        text = prefixes.shorten(cell.lexical) if prefixes else f"<{cell.lexical}>"
    elif cell.kind == "blank":
        text = f"_:{cell.lexical}"
    else:
        text = cell.lexical
        if cell.lang:
            text = f"{text}@{cell.lang}"
        elif cell.datatype and cell.datatype not in (XSD + "string", RDF_LANGSTRING):
            dt = prefixes.shorten(cell.datatype) if prefixes else f"<{cell.datatype}>"
            text = f"{text}^^{dt}"
    return text.replace("\n", " ").replace("|", "\\|")


def visible_indices(total: int, available: int | None = None) -> list[int | None]:
    """Indices shown for ``total`` items; ``None`` marks the ellipsis.

    ``available`` is how many items are materialized (rows may be capped).
    """
    available = total if available is None else available
    if total <= SHOW_MAX:
        return list(range(min(total, available)))
    head = list(range(min(SHOW_EDGE, available)))
    tail = list(range(max(available - SHOW_EDGE, len(head)), available))
    return head + [None] + tail


def visible_cells(t: ResultTable) -> list[Cell]:
    cols = visible_indices(t.total_cols, len(t.variables))
    out = []
    for ri in visible_indices(t.total_rows, len(t.rows)):
        if ri is None:
            continue
        out.extend(t.rows[ri][ci] for ci in cols if ci is not None)
    return out


def _plural(n: int, word: str) -> str:
    return f"{n} {word}" if n == 1 else f"{n} {word}s"


def render_table(t: ResultTable, prefixes: PrefixMap | None = None) -> str:
    """Markdown-style table, at most 5 leading + 5 trailing rows and columns."""
    if t.is_ask:
        return f"ASK result: {'true' if t.ask_value else 'false'}"
    cols = visible_indices(t.total_cols, len(t.variables))
    header = [ELLIPSIS if c is None else t.variables[c] for c in cols]
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in cols) + "|"]
    for ri in visible_indices(t.total_rows, len(t.rows)):
        if ri is None:
            cells = [ELLIPSIS] * len(cols)
        else:
            row = t.rows[ri]
            cells = [ELLIPSIS if c is None else render_cell(row[c], prefixes) for c in cols]
        lines.append("| " + " | ".join(cells) + " |")
    footer = f"{_plural(t.total_rows, 'row')} total, {_plural(t.total_cols, 'column')} total"
    if t.truncated:
        footer += f" (only the first {len(t.rows)} rows were retrieved)"
    lines.append(footer)
    return "\n".join(lines)
