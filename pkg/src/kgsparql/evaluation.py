"""Scoring predicted queries against ground truth."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
from collections import Counter, defaultdict
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Hashable, Literal, Sequence

from kgsparql.agent import Answered, Cancelled, Exhausted, Outcome
from kgsparql.catalog import Catalog, KnowledgeGraphConfig
from kgsparql.sparql import Cell, QueryError, ResultTable, SparqlClient

logger = logging.getLogger(__name__)

ASSIGNMENT_ROW_LIMIT = 1024

XSD = "http://www.w3.org/2001/XMLSchema#"
NUMERIC_TYPES = frozenset(XSD + t for t in (
    "integer", "decimal", "float", "double", "int", "long", "short", "byte",
    "nonNegativeInteger", "nonPositiveInteger", "positiveInteger", "negativeInteger",
    "unsignedLong", "unsignedInt", "unsignedShort", "unsignedByte",
))
TEMPORAL_TYPES = frozenset(XSD + t for t in ("date", "dateTime", "dateTimeStamp", "gYear", "gYearMonth"))
BOOLEAN_TYPE = XSD + "boolean"

_TEMPORAL = re.compile(
    r"^\s*(-?\d{4,})(?:-(\d{2})(?:-(\d{2})(?:T(\d{2}):(\d{2})(?::(\d{2})(?:\.\d+)?)?)?)?)?"
    r"(?:Z|[+-]\d{2}:\d{2})?\s*$"
)

Path_ = Literal["matched", "exact_fallback", "ask_equivalence", "excluded", "invalid", "error"]


@dataclass(frozen=True)
class Temporal:
    """A date/time value; two values match when they agree up to the coarser precision."""

    parts: tuple[int, ...]

    def matches(self, other: "Temporal") -> bool:
        n = min(len(self.parts), len(other.parts))
        return self.parts[:n] == other.parts[:n]


def cell_key(cell: Cell) -> Hashable:
    """Comparison value of a cell. Language tags are ignored, numbers compare by value."""
    if cell.kind == "iri":
        lex = cell.lexical.strip()
        if lex.startswith("<") and lex.endswith(">"):
            lex = lex[1:-1]
        return ("iri", lex)
    if cell.kind != "literal":
        return (cell.kind, cell.lexical)
    dt = cell.datatype
    if dt in NUMERIC_TYPES:
        try:
            value = Decimal(cell.lexical.strip())
            if value.is_finite():
                return ("num", format(value.normalize(), "f") if value != 0 else "0")
        except InvalidOperation:
            pass
        return ("lit", cell.lexical)
    if dt in TEMPORAL_TYPES:
        m = _TEMPORAL.match(cell.lexical)
        if m:
            return ("time", Temporal(tuple(int(g) for g in m.groups() if g is not None)))
        return ("lit", cell.lexical)
    if dt == BOOLEAN_TYPE:
        return ("bool", cell.lexical.strip().lower() in ("true", "1"))
    return ("lit", cell.lexical)


def keys_match(a: Hashable, b: Hashable) -> bool:
    if a == b:
        return True
    if a[0] == b[0] == "time":
        return a[1].matches(b[1])
    return False


def _bucket(key: Hashable) -> Hashable:
    # coarse hash under which matching keys always collide
    return ("time", key[1].parts[0]) if key[0] == "time" else key


def _keys_contained(gt: Sequence[Hashable], pred: Sequence[Hashable]) -> bool:
    if not any(k[0] == "time" for k in gt):
        need = Counter(gt)
        have = Counter(pred)
        return all(have[k] >= c for k, c in need.items())
    # temporal matching is not transitive, so assign gt cells to pred cells explicitly
    adj = [[j for j, p in enumerate(pred) if keys_match(g, p)] for g in gt]
    return max_matching(adj, len(pred)) == len(gt)


def row_match(gt_row: Sequence[Cell], pred_row: Sequence[Cell]) -> bool:
    """True iff the values of ``gt_row`` form a sub-multiset of the values of ``pred_row``."""
    return _keys_contained([cell_key(c) for c in gt_row], [cell_key(c) for c in pred_row])


def max_matching(adj: Sequence[Sequence[int]], n_right: int) -> int:
    """Size of a maximum bipartite matching (Hopcroft-Karp). ``adj[u]`` lists right vertices of left ``u``."""
    n_left = len(adj)
    match_l = [-1] * n_left
    match_r = [-1] * n_right
    # greedy start settles the common case of near-identical tables in one pass
    for u, vs in enumerate(adj):
        for v in vs:
            if match_r[v] < 0:
                match_l[u], match_r[v] = v, u
                break
    inf = n_left + 1
    while True:
        dist = [inf] * n_left
        queue = [u for u in range(n_left) if match_l[u] < 0]
        for u in queue:
            dist[u] = 0
        found = False
        head = 0
        while head < len(queue):
            u = queue[head]
            head += 1
            for v in adj[u]:
                w = match_r[v]
                if w < 0:
                    found = True
                elif dist[w] == inf:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        if not found:
            break
        for root in range(n_left):
            if match_l[root] >= 0:
                continue
            # iterative DFS along layered edges
            stack = [(root, iter(adj[root]))]
            path: list[tuple[int, int]] = []
            while stack:
                u, it = stack[-1]
                advanced = False
                for v in it:
                    w = match_r[v]
                    if w < 0:
                        path.append((u, v))
                        for pu, pv in path:
                            match_l[pu], match_r[pv] = pv, pu
                        stack = []
                        advanced = True
                        break
                    if dist[w] == dist[u] + 1:
                        path.append((u, v))
                        stack.append((w, iter(adj[w])))
                        advanced = True
                        break
                if not advanced:
                    dist[u] = inf
                    stack.pop()
                    if path:
                        path.pop()
    return sum(1 for v in match_l if v >= 0)


@dataclass(frozen=True)
class EvalScore:
    precision: float
    recall: float
    f1: float
    path: Path_
    notes: str = ""

    @property
    def counted(self) -> bool:
        """Whether the score enters the benchmark mean."""
        return self.path not in ("excluded", "invalid")

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "path": self.path, "notes": self.notes}


def _prf(matches: int, n_pred: int, n_gt: int, path: Path_, notes: str = "") -> EvalScore:
    p = matches / n_pred if n_pred else 0.0
    r = matches / n_gt if n_gt else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return EvalScore(p, r, f1, path, notes)


def assignment_f1(gt: ResultTable, pred: ResultTable) -> EvalScore:
    """F1 under a maximum one-to-one assignment of predicted rows to ground-truth rows.

    A predicted row may carry extra columns; it matches a ground-truth row
    when it contains all of that row's values.
    """
    gt_keys = [[cell_key(c) for c in row] for row in gt.rows]
    pred_keys = [[cell_key(c) for c in row] for row in pred.rows]
    if not gt_keys or not pred_keys:
        return _prf(0, len(pred_keys), len(gt_keys), "matched")
    buckets: dict[Hashable, set[int]] = defaultdict(set)
    for j, row in enumerate(pred_keys):
        for k in row:
            buckets[_bucket(k)].add(j)
    everything = range(len(pred_keys))
    adj: list[list[int]] = []
    for row in gt_keys:
        if row:
            # any pred row containing this gt row must share the bucket of every gt cell
            candidates = min((buckets.get(_bucket(k), set()) for k in row), key=len)
            candidates = sorted(candidates)
        else:
            candidates = everything
        adj.append([j for j in candidates if _keys_contained(row, pred_keys[j])])
    return _prf(max_matching(adj, len(pred_keys)), len(pred_keys), len(gt_keys), "matched")


def _canonical_row(row: Sequence[Cell]) -> tuple:
    keys = []
    for c in row:
        k = cell_key(c)
        keys.append(("time", k[1].parts) if k[0] == "time" else k)
    return tuple(sorted(keys, key=repr))


def exact_f1(gt: ResultTable, pred: ResultTable) -> EvalScore:
    """Standard F1 over multisets of whole rows; extra columns count as a mismatch."""
    g = Counter(_canonical_row(r) for r in gt.rows)
    p = Counter(_canonical_row(r) for r in pred.rows)
    inter = sum((g & p).values())
    return _prf(inter, len(pred.rows), len(gt.rows), "exact_fallback")


def compare_tables(gt: ResultTable, pred: ResultTable) -> EvalScore:
    if gt.is_ask or pred.is_ask:
        gt_truth = gt.ask_value if gt.is_ask else bool(gt.rows)
        pred_truth = pred.ask_value if pred.is_ask else bool(pred.rows)
        ok = bool(gt_truth) == bool(pred_truth)
        value = 1.0 if ok else 0.0
        return EvalScore(value, value, value, "ask_equivalence")
    if len(gt.rows) > ASSIGNMENT_ROW_LIMIT or len(pred.rows) > ASSIGNMENT_ROW_LIMIT:
        return exact_f1(gt, pred)
    return assignment_f1(gt, pred)


@dataclass(frozen=True)
class BenchmarkSample:
    id: str
    question: str
    gt_sparql: str
    kg: str
    split: str | None = None

    def __post_init__(self):
        if not self.gt_sparql or not self.gt_sparql.strip():
            raise ValueError(f"sample {self.id!r}: ground-truth SPARQL must not be empty")


class ResultCache:
    """Ground-truth results on disk, keyed by endpoint and query hash.

    Writes go to a temporary file in the same directory and are renamed into
    place, so concurrent readers never see a partial entry.
    """

    def __init__(self, directory: str | os.PathLike):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    def _path(self, endpoint: str, sparql: str) -> Path:
        h = hashlib.sha256(f"{endpoint}\n{sparql}".encode("utf-8")).hexdigest()
        return self.dir / f"{h}.json"

    def get(self, endpoint: str, sparql: str) -> ResultTable | None:
        path = self._path(endpoint, sparql)
        try:
            return ResultTable.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except FileNotFoundError:
            return None
        except (ValueError, KeyError) as e:
            logger.warning("ignoring corrupt cache entry %s: %s", path, e)
            return None

    def put(self, endpoint: str, sparql: str, table: ResultTable) -> None:
        path = self._path(endpoint, sparql)
        fd, tmp = tempfile.mkstemp(dir=self.dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(table.to_dict(), f)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise


def execute_cached(client: SparqlClient, kg: KnowledgeGraphConfig, sparql: str,
                   cache: ResultCache | None) -> ResultTable:
    if cache is not None:
        hit = cache.get(kg.endpoint, sparql)
        if hit is not None:
            return hit
    table = client.execute(kg, sparql)
    if cache is not None:
        cache.put(kg.endpoint, sparql, table)
    return table


def predicted_query(outcome: Outcome | None) -> tuple[str, str, str] | None:
    """(kg, sparql, note) of the query to score, or None if there is none."""
    if isinstance(outcome, Answered):
        return outcome.kg, outcome.sparql, ""
    if isinstance(outcome, (Cancelled, Exhausted)) and outcome.best_attempt:
        ba = outcome.best_attempt
        if ba.get("sparql") and ba.get("kg"):
            return ba["kg"], ba["sparql"], f"scored best attempt of {type(outcome).__name__.lower()} session"
    return None


def score_sample(
    sample: BenchmarkSample,
    predicted: Outcome | None,
    client: SparqlClient,
    catalog: Catalog,
    cache: ResultCache | None = None,
) -> EvalScore:
    try:
        gt = execute_cached(client, catalog.lookup(sample.kg), sample.gt_sparql, cache)
    except (QueryError, KeyError) as e:
        msg = f"{e.kind}: {e.message}" if isinstance(e, QueryError) else str(e)
        return EvalScore(0.0, 0.0, 0.0, "invalid", f"ground truth failed: {msg}")
    if gt.is_empty:
        return EvalScore(0.0, 0.0, 0.0, "excluded", "empty ground truth")
    pq = predicted_query(predicted)
    if pq is None:
        kind = type(predicted).__name__.lower() if predicted is not None else "no outcome"
        return EvalScore(0.0, 0.0, 0.0, "error", f"{kind} without a query")
    kg, sparql, note = pq
    if kg not in catalog:
        return EvalScore(0.0, 0.0, 0.0, "error", f"unknown knowledge graph {kg!r}")
    try:
        pred = client.execute(catalog.lookup(kg), sparql)
    except QueryError as e:
        return EvalScore(0.0, 0.0, 0.0, "error", f"{e.kind}: {e.message}")
    score = compare_tables(gt, pred)
    if note:
        score = EvalScore(score.precision, score.recall, score.f1, score.path, note)
    return score
