"""Shared test data: a small DBLP-shaped graph with index dumps and a catalog."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from kgsparql.catalog import Catalog, ItemRecord, parse_catalog, write_item_records
from kgsparql.sparql import SparqlClient
from kgsparql.testing import FixtureEndpoint
from kgsparql.toolbox import Toolbox, load_resources
from kgsparql.vector_index import HashingEmbedder

DBLP = "https://dblp.org/rdf/schema#"
STREAM = "https://dblp.org/streams/conf/"
PID = "https://dblp.org/pid/"
REC = "https://dblp.org/rec/conf/"
RDFS_LABEL = "http://www.w3.org/2000/01/rdf-schema#label"

PREFIXES = {"dblp": DBLP, "streams": STREAM, "pid": PID, "rec": REC}

CONFERENCES = [
    ("nips", "NeurIPS", 900, "Neural Information Processing Systems"),
    ("cvpr", "CVPR", 850, "Computer Vision and Pattern Recognition"),
    ("icml", "ICML", 800, "International Conference on Machine Learning"),
    ("aaai", "AAAI", 750, "AAAI Conference on Artificial Intelligence"),
    ("iclr", "ICLR", 700, "International Conference on Learning Representations"),
    ("sigmod", "SIGMOD", 650, "International Conference on Management of Data"),
]
AUTHORS = [("bengio", "Yoshua Bengio", 500), ("levine", "Sergey Levine", 400), ("abbeel", "Pieter Abbeel", 300)]
# (paper id, conference, authors)
PAPERS = [
    ("p1", "nips", ["levine", "abbeel"]),
    ("p2", "nips", ["levine"]),
    ("p3", "icml", ["levine", "bengio"]),
    ("p4", "iclr", ["levine"]),
    ("p5", "cvpr", ["abbeel"]),
    ("p6", "aaai", ["bengio"]),
    ("p7", "iclr", ["bengio", "abbeel"]),
    ("p8", "sigmod", ["bengio"]),
    ("p9", "sigmod", ["bengio"]),
]
PROPERTIES = [
    ("publishedInStream", "published in stream", 90, "stream of the venue a publication appeared in"),
    ("authoredBy", "authored by", 80, "creator of a publication"),
    ("title", "title", 70, "title of a publication"),
    ("yearOfPublication", "year of publication", 60, ""),
]

TOP5 = ("nips", "cvpr", "icml", "aaai", "iclr")

FINAL_QUERY = """PREFIX dblp: <https://dblp.org/rdf/schema#>
PREFIX streams: <https://dblp.org/streams/conf/>
SELECT ?author (COUNT(DISTINCT ?paper) AS ?count) WHERE {
  VALUES ?stream { streams:nips streams:cvpr streams:icml streams:aaai streams:iclr }
  ?paper dblp:publishedInStream ?stream .
  ?paper dblp:authoredBy ?author .
}
GROUP BY ?author
ORDER BY DESC(?count)
LIMIT 1"""

PROBE_QUERY = """PREFIX dblp: <https://dblp.org/rdf/schema#>
PREFIX streams: <https://dblp.org/streams/conf/>
SELECT (COUNT(?paper) AS ?papers) WHERE { ?paper dblp:publishedInStream streams:nips }"""


def entity_records() -> list[ItemRecord]:
    recs = [ItemRecord(STREAM + key, label, score, (syn,), ("conference or workshop",), "entity")
            for key, label, score, syn in CONFERENCES]
    recs += [ItemRecord(PID + key, label, score, (), ("person",), "entity") for key, label, score in AUTHORS]
    return sorted(recs, key=lambda r: -r.score)


def property_records() -> list[ItemRecord]:
    return [ItemRecord(DBLP + key, label, score, (), (info,) if info else (), "property")
            for key, label, score, info in PROPERTIES]


def dblp_graph():
    from rdflib import RDFS, Graph, Literal, Namespace, URIRef

    g = Graph()
    d = Namespace(DBLP)
    for key, label, _, _ in CONFERENCES:
        g.add((URIRef(STREAM + key), RDFS.label, Literal(label)))
    for key, label, _ in AUTHORS:
        g.add((URIRef(PID + key), RDFS.label, Literal(label)))
    for pid, conf, authors in PAPERS:
        paper = URIRef(REC + pid)
        g.add((paper, d.publishedInStream, URIRef(STREAM + conf)))
        g.add((paper, d.title, Literal(f"Paper {pid}")))
        for a in authors:
            g.add((paper, d.authoredBy, URIRef(PID + a)))
    for key, label, _, _ in PROPERTIES:
        g.add((URIRef(DBLP + key), RDFS.label, Literal(label)))
    return g


EXAMPLES = [
    {"question": "Which papers did Yoshua Bengio publish at ICLR?",
     "sparql": "SELECT ?p WHERE { ?p <https://dblp.org/rdf/schema#authoredBy> <https://dblp.org/pid/bengio> ; "
               "<https://dblp.org/rdf/schema#publishedInStream> <https://dblp.org/streams/conf/iclr> }"},
    {"question": "How many papers were published at NeurIPS?",
     "sparql": "SELECT (COUNT(?p) AS ?n) WHERE { ?p <https://dblp.org/rdf/schema#publishedInStream> "
               "<https://dblp.org/streams/conf/nips> }"},
    {"question": "Who authored the paper p5?",
     "sparql": "SELECT ?a WHERE { <https://dblp.org/rec/conf/p5> <https://dblp.org/rdf/schema#authoredBy> ?a }"},
    {"question": "List all conferences.",
     "sparql": "SELECT DISTINCT ?c WHERE { ?p <https://dblp.org/rdf/schema#publishedInStream> ?c }"},
    {"question": "What is the title of p1?",
     "sparql": "SELECT ?t WHERE { <https://dblp.org/rec/conf/p1> <https://dblp.org/rdf/schema#title> ?t }"},
]


def write_data(directory: Path) -> dict[str, Path]:
    directory.mkdir(parents=True, exist_ok=True)
    pm_prefixes = PREFIXES
    from kgsparql.iris import PrefixMap

    pm = PrefixMap(pm_prefixes)
    paths = {
        "entity_data": directory / "dblp-entities.tsv",
        "property_data": directory / "dblp-properties.tsv",
        "examples": directory / "dblp-examples.jsonl",
    }
    write_item_records(entity_records(), paths["entity_data"], pm)
    write_item_records(property_records(), paths["property_data"], pm)
    paths["examples"].write_text("".join(json.dumps(e) + "\n" for e in EXAMPLES), encoding="utf-8")
    return paths


def catalog_dict(endpoint: str, paths: dict[str, Path], examples: bool = True) -> dict:
    graph = {
        "name": "dblp",
        "endpoint": endpoint,
        "prefixes": dict(PREFIXES),
        "entity_data": str(paths["entity_data"]),
        "property_data": str(paths["property_data"]),
    }
    if examples:
        graph["examples"] = str(paths["examples"])
    return {"graphs": [graph], "embedding": {"provider": "hashing", "dimension": 64}}


@dataclass
class DblpEnv:
    endpoint: FixtureEndpoint
    catalog: Catalog
    toolbox: Toolbox
    paths: dict[str, Path]


def make_env(directory: Path, endpoint: FixtureEndpoint, examples: bool = True) -> DblpEnv:
    paths = write_data(directory)
    catalog = parse_catalog(catalog_dict(endpoint.url, paths, examples), directory)
    provider = HashingEmbedder(64)
    toolbox = Toolbox(catalog, SparqlClient(timeout=10), load_resources(catalog, provider), provider)
    return DblpEnv(endpoint, catalog, toolbox, paths)
