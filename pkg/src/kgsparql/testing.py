"""In-process SPARQL endpoint for tests and offline demos.

Requests are answered from canned query -> response pairs first; anything
else is evaluated against an optional rdflib graph (``pip install rdflib``).
"""

from __future__ import annotations

import json
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Mapping
from urllib.parse import parse_qs


def normalize_query(q: str) -> str:
    return re.sub(r"\s+", " ", q).strip()


def select_json(variables: list[str], rows: list[list[Any]]) -> dict:
    """Build a SPARQL JSON result. Cells: ``None``, ``"<iri>"``, plain strings, or binding dicts."""
    bindings = []
    for row in rows:
        b = {}
        for var, val in zip(variables, row):
            if val is None:
                continue
            if isinstance(val, dict):
                b[var] = val
            elif isinstance(val, str) and val.startswith("<") and val.endswith(">"):
                b[var] = {"type": "uri", "value": val[1:-1]}
            elif isinstance(val, bool):
                b[var] = {"type": "literal", "value": str(val).lower(),
                          "datatype": "http://www.w3.org/2001/XMLSchema#boolean"}
            elif isinstance(val, int):
                b[var] = {"type": "literal", "value": str(val),
                          "datatype": "http://www.w3.org/2001/XMLSchema#integer"}
            else:
                b[var] = {"type": "literal", "value": str(val)}
        bindings.append(b)
    return {"head": {"vars": variables}, "results": {"bindings": bindings}}


def _rdflib_json(graph, query: str) -> dict:
    from rdflib import BNode, Literal, URIRef

    result = graph.query(query)
    if result.type == "ASK":
        return {"head": {}, "boolean": bool(result.askAnswer)}
    variables = [str(v) for v in result.vars]
    bindings = []
    for row in result:
        b = {}
        for var, val in zip(variables, row):
            if val is None:
                continue
            if isinstance(val, URIRef):
                b[var] = {"type": "uri", "value": str(val)}
            elif isinstance(val, BNode):
                b[var] = {"type": "bnode", "value": str(val)}
            elif isinstance(val, Literal):
                d = {"type": "literal", "value": str(val)}
                if val.language:
                    d["xml:lang"] = val.language
                elif val.datatype:
                    d["datatype"] = str(val.datatype)
                b[var] = d
        bindings.append(b)
    return {"head": {"vars": variables}, "results": {"bindings": bindings}}


class FixtureEndpoint:
    """Threaded HTTP server speaking the SPARQL protocol on 127.0.0.1.

    ``canned`` maps query text (whitespace-insensitive) to a JSON result
    document, or to ``(status, body)`` for error responses. ``stall`` makes
    every request hang, for timeout tests. Every received query is appended
    to ``requests``.
    """

    def __init__(self, canned: Mapping[str, Any] | None = None, graph=None, stall: float = 0.0):
        self.canned = {normalize_query(k): v for k, v in (canned or {}).items()}
        self.graph = graph
        self.stall = stall
        self.requests: list[str] = []
        self._lock = threading.Lock()
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        assert self._server is not None, "endpoint not started"
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/sparql"

    def respond(self, query: str) -> tuple[int, str]:
        with self._lock:
            self.requests.append(query)
            return self._respond(query)

    def _respond(self, query: str) -> tuple[int, str]:
        key = normalize_query(query)
        if key in self.canned:
            value = self.canned[key]
            if isinstance(value, tuple):
                status, body = value
                return status, body if isinstance(body, str) else json.dumps(body)
            return 200, json.dumps(value)
        if self.graph is None:
            return 400, f"no canned response for query: {key}"
        try:
            return 200, json.dumps(_rdflib_json(self.graph, query))
        except Exception as e:  # rdflib raises assorted parse errors
            return 400, f"Invalid SPARQL query: {e}"

    def __enter__(self) -> "FixtureEndpoint":
        fixture = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _query(self) -> str:
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length).decode("utf-8")
                ctype = self.headers.get("Content-Type", "")
                if "application/sparql-query" in ctype:
                    return body
                return parse_qs(body).get("query", [""])[0]

            def do_POST(self):
                query = self._query()
                if fixture.stall:
                    time.sleep(fixture.stall)
                status, body = fixture.respond(query)
                data = body.encode("utf-8")
                self.send_response(status)
                ctype = "application/sparql-results+json" if status == 200 else "text/plain"
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                try:
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._server.daemon_threads = True
        self._server.block_on_close = False
        self._thread = threading.Thread(target=self._server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
