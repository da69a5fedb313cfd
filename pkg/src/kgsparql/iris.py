"""IRI helpers: prefix expansion, shortening and extraction from text."""

from __future__ import annotations

import re
from typing import Iterable, Mapping

WELL_KNOWN_PREFIXES: dict[str, str] = {
    "rdf": "http://www.w3.org/1999/02/22-rdf-syntax-ns#",
    "rdfs": "http://www.w3.org/2000/01/rdf-schema#",
    "xsd": "http://www.w3.org/2001/XMLSchema#",
    "owl": "http://www.w3.org/2002/07/owl#",
}

_SCHEME = re.compile(r"^[A-Za-z][A-Za-z0-9+.\-]*:")
_PREFIXED = re.compile(r"^([A-Za-z][\w\-.]*)?:(\S*)$")
_LOCAL_SAFE = re.compile(r"^[\w\-]([\w\-.]*[\w\-])?$")
_ABSOLUTE_IN_TEXT = re.compile(r"<([^<>\s\"{}|\\^`]+)>")
_PREFIXED_IN_TEXT = re.compile(r"(?<![\w?$:/#.<@\-])([A-Za-z][\w\-.]*)?:([\w\-]+(?:\.[\w\-]+)*)")
_STRING_LITERAL = re.compile(r"\"\"\".*?\"\"\"|'''.*?'''|\"(?:[^\"\\\n]|\\.)*\"|'(?:[^'\\\n]|\\.)*'", re.S)
_PREFIX_DECL = re.compile(r"PREFIX\s+([A-Za-z][\w\-.]*)?:\s*<([^>]*)>", re.I)
_COMMENT = re.compile(r"(?m)#[^\n<>]*$")


class PrefixMap:
    """Bidirectional prefix table. Well-known vocabularies are always present."""

    def __init__(self, prefixes: Iterable[tuple[str, str]] | Mapping[str, str] = ()):
        items = prefixes.items() if isinstance(prefixes, Mapping) else prefixes
        self._map: dict[str, str] = dict(WELL_KNOWN_PREFIXES)
        for name, base in items:
            self._map[name] = base
        # longest base first so the most specific prefix wins when shortening
        self._by_base = sorted(self._map.items(), key=lambda kv: (-len(kv[1]), kv[0]))

    def __contains__(self, name: str) -> bool:
        return name in self._map

    def __getitem__(self, name: str) -> str:
        return self._map[name]

    def items(self):
        return self._map.items()

    def with_prefixes(self, extra: Mapping[str, str]) -> "PrefixMap":
        merged = dict(self._map)
        merged.update(extra)
        return PrefixMap(merged)

    def expand(self, text: str) -> str:
        """Return the absolute form of ``text`` (``<iri>``, ``pre:local`` or absolute).

        Raises ValueError if ``text`` is not an IRI in any accepted form.
        """
        text = text.strip()
        if text.startswith("<") and text.endswith(">"):
            inner = text[1:-1]
            if not _SCHEME.match(inner) or any(c in inner for c in ' <>"{}|\\^`'):
                raise ValueError(f"not an absolute IRI: {text}")
            return inner
        m = _PREFIXED.match(text)
        if m and (m.group(1) or "") in self._map:
            return self._map[m.group(1) or ""] + m.group(2)
        if _SCHEME.match(text) and "://" in text and not any(c in text for c in ' <>"{}|\\^`'):
            return text
        if _SCHEME.match(text) and text.split(":", 1)[0] in ("urn", "mailto", "tag"):
            return text
        raise ValueError(f"not an IRI or unknown prefix: {text}")

    def shorten(self, iri: str) -> str:
        """Prefixed form when a known base matches, otherwise ``<iri>``."""
        for name, base in self._by_base:
            if iri.startswith(base) and len(iri) > len(base):
                local = iri[len(base):]
                if _LOCAL_SAFE.match(local):
                    return f"{name}:{local}"
        return f"<{iri}>"


def is_iri_text(text: str, prefixes: PrefixMap) -> bool:
    try:
        prefixes.expand(text)
    except ValueError:
        return False
    return True


def query_prefixes(sparql: str) -> dict[str, str]:
    """PREFIX declarations of a SPARQL query."""
    return {(m.group(1) or ""): m.group(2) for m in _PREFIX_DECL.finditer(sparql)}


def _strip_for_scan(sparql: str) -> str:
    text = _STRING_LITERAL.sub(" ", sparql)
    text = _PREFIX_DECL.sub(" ", text)
    text = re.sub(r"BASE\s*<[^>]*>", " ", text, flags=re.I)
    return _COMMENT.sub(" ", text)


def add_missing_prefixes(sparql: str, prefixes: PrefixMap) -> str:
    """Prepend PREFIX declarations for known prefixes the query uses but does not declare."""
    declared = query_prefixes(sparql)
    body = _ABSOLUTE_IN_TEXT.sub(" ", _strip_for_scan(sparql))
    used = {m.group(1) or "" for m in _PREFIXED_IN_TEXT.finditer(body)}
    missing = sorted(p for p in used if p not in declared and p in prefixes)
    if not missing:
        return sparql
    return "".join(f"PREFIX {p}: <{prefixes[p]}>\n" for p in missing) + sparql


def find_iris(text: str, prefixes: PrefixMap, sparql: bool = False) -> set[str]:
    """Absolute IRIs mentioned in ``text``, either as ``<...>`` or with a known prefix.

    With ``sparql=True`` string literals, comments and the PREFIX prologue are
    skipped and the query's own prefix declarations are honoured.
    """
    if sparql:
        prefixes = prefixes.with_prefixes(query_prefixes(text))
        text = _strip_for_scan(text)
    found: set[str] = set()
    for m in _ABSOLUTE_IN_TEXT.finditer(text):
        if _SCHEME.match(m.group(1)):
            found.add(m.group(1))
    stripped = _ABSOLUTE_IN_TEXT.sub(" ", text)
    for m in _PREFIXED_IN_TEXT.finditer(stripped):
        name = m.group(1) or ""
        if name in prefixes:
            found.add(prefixes[name] + m.group(2))
    return found


def local_name(iri: str) -> str:
    for sep in ("#", "/", ":"):
        if sep in iri:
            tail = iri.rsplit(sep, 1)[1]
            if tail:
                return tail
    return iri
