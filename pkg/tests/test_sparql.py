import json

import pytest

from kgsparql.catalog import KnowledgeGraphConfig
from kgsparql.iris import PrefixMap, add_missing_prefixes, find_iris, local_name
from kgsparql.sparql import (
    Cell,
    QueryError,
    ResultTable,
    SparqlClient,
    check_braces,
    classify_query,
    parse_results_json,
    render_cell,
    render_table,
    visible_cells,
)
from kgsparql.testing import FixtureEndpoint, select_json

WD = PrefixMap({"wd": "http://www.wikidata.org/entity/", "wdt": "http://www.wikidata.org/prop/direct/"})


def kg_at(url):
    return KnowledgeGraphConfig("fx", url)


# IRIs


def test_prefix_map_expand_and_shorten():
    assert WD.expand("wd:Q42") == "http://www.wikidata.org/entity/Q42"
    assert WD.expand("<http://x.org/a>") == "http://x.org/a"
    assert WD.expand("rdfs:label").endswith("#label")
    with pytest.raises(ValueError):
        WD.expand("nope:Q1")
    with pytest.raises(ValueError):
        WD.expand("just words")
    assert WD.shorten("http://www.wikidata.org/entity/Q42") == "wd:Q42"
    assert WD.shorten("http://other.org/x y") == "<http://other.org/x y>"


def test_find_iris_in_sparql_ignores_literals_and_prologue():
    q = """PREFIX ex: <http://ex.org/>
    # wd:Q1 in a comment
    SELECT ?x WHERE { ?x wdt:P31 wd:Q5 ; ex:name "wd:Q2" . ?x <http://abs.org/p> ?y }"""
    assert find_iris(q, WD, sparql=True) == {
        "http://www.wikidata.org/prop/direct/P31", "http://www.wikidata.org/entity/Q5",
        "http://ex.org/name", "http://abs.org/p",
    }


def test_add_missing_prefixes():
    q = "SELECT ?x WHERE { ?x wdt:P31 wd:Q5 }"
    out = add_missing_prefixes(q, WD)
    assert out.startswith("PREFIX wd: <http://www.wikidata.org/entity/>\nPREFIX wdt:")
    assert add_missing_prefixes(out, WD) == out
    assert local_name("http://ex.org/a#b") == "b"


# query helpers


@pytest.mark.parametrize("q,kind", [
    ("PREFIX a: <http://a/> SELECT * WHERE { ?s ?p ?o }", "select"),
    ("ask { ?s ?p ?o }", "ask"),
    ("# hi\nCONSTRUCT { ?s ?p ?o } WHERE { ?s ?p ?o }", "construct"),
    ("INSERT DATA { <a:b> <a:c> <a:d> }", "update"),
    ("hello", "unknown"),
])
def test_classify(q, kind):
    assert classify_query(q) == kind


def test_check_braces():
    assert check_braces('SELECT * { ?s ?p "}" }')
    assert not check_braces("SELECT * { ?s ?p ?o")
    assert check_braces("SELECT * { ?s <http://x/{a}> ?o } # }")


def test_parse_results_json_and_cap():
    doc = select_json(["a", "b"], [["<http://x/1>", 5], ["<http://x/2>", None], ["<http://x/3>", "z"]])
    t = parse_results_json(json.dumps(doc), row_cap=2)
    assert t.total_rows == 3 and len(t.rows) == 2 and t.truncated
    assert t.rows[0] == [Cell.iri("http://x/1"), Cell.literal("5", "http://www.w3.org/2001/XMLSchema#integer")]
    assert t.rows[1][1] == Cell.unbound()
    ask = parse_results_json('{"head": {}, "boolean": true}')
    assert ask.is_ask and ask.ask_value
    with pytest.raises(QueryError) as ei:
        parse_results_json("not json")
    assert ei.value.kind == "parse"


# client


def test_client_roundtrip_and_errors():
    canned = {
        "SELECT ?x WHERE { ?x ?p ?o }": select_json(["x"], [["<http://x/1>"]]),
        "ASK { ?s ?p ?o }": {"head": {}, "boolean": False},
        "SELECT ?bad WHERE { ?bad ?p ?o }": (400, "Invalid SPARQL query: unexpected token"),
    }
    with FixtureEndpoint(canned) as ep:
        client = SparqlClient(timeout=5)
        kg = kg_at(ep.url)
        t = client.execute(kg, "SELECT ?x   WHERE { ?x ?p ?o }")
        assert t.rows == [[Cell.iri("http://x/1")]]
        assert client.execute(kg, "ASK { ?s ?p ?o }").ask_value is False
        with pytest.raises(QueryError) as ei:
            client.execute(kg, "SELECT ?bad WHERE { ?bad ?p ?o }")
        assert ei.value.kind == "endpoint_http" and "unexpected token" in ei.value.message
        for bad in ["", "DELETE WHERE { ?s ?p ?o }", "SELECT * { ?s", "DESCRIBE <http://x/1>"]:
            with pytest.raises(QueryError) as ei:
                client.execute(kg, bad)
            assert ei.value.kind == "malformed_query"
        assert len(ep.requests) == 3


def test_client_timeout():
    with FixtureEndpoint({}, stall=2.0) as ep:
        with pytest.raises(QueryError) as ei:
            SparqlClient(timeout=0.3).execute(kg_at(ep.url), "SELECT * WHERE { ?s ?p ?o }")
    assert ei.value.kind == "timeout"


def test_timeout_env_override(monkeypatch):
    monkeypatch.setenv("KGSPARQL_TIMEOUT", "7.5")
    assert SparqlClient().timeout == 7.5


def test_unreachable_endpoint():
    with pytest.raises(QueryError) as ei:
        SparqlClient(timeout=2).execute(kg_at("http://127.0.0.1:9/sparql"), "ASK { ?s ?p ?o }")
    assert ei.value.kind == "endpoint_http"


# rendering


def test_render_cell():
    xsd = "http://www.w3.org/2001/XMLSchema#"
    assert render_cell(Cell.iri("http://www.wikidata.org/entity/Q42"), WD) == "wd:Q42"
    assert render_cell(Cell.literal("Douglas", lang="en"), WD) == "Douglas@en"
    assert render_cell(Cell.literal("5", xsd + "integer"), WD) == "5^^xsd:integer"
    assert render_cell(Cell.literal("plain", xsd + "string"), WD) == "plain"
    assert render_cell(Cell.literal("a|b\nc"), WD) == "a\\|b c"
    assert render_cell(Cell.unbound(), WD) == ""


def test_render_small_table_and_ask():
    t = ResultTable.select(["x"], [[Cell.literal("a")]])
    assert render_table(t) == "| x |\n|---|\n| a |\n1 row total, 1 column total"
    assert render_table(ResultTable.ask(True)) == "ASK result: true"
    empty = ResultTable.select(["x", "y"], [])
    assert render_table(empty).endswith("0 rows total, 2 columns total")


def test_render_truncated_footer():
    t = ResultTable(["x"], [[Cell.literal(str(i))] for i in range(3)], total_rows=50, total_cols=1, truncated=True)
    out = render_table(t)
    assert out.endswith("50 rows total, 1 column total (only the first 3 rows were retrieved)")


def test_visible_cells_follow_rendering():
    t = ResultTable.select([f"c{j}" for j in range(12)],
                           [[Cell.iri(f"http://x/{i}/{j}") for j in range(12)] for i in range(12)])
    shown = {c.lexical for c in visible_cells(t)}
    assert len(shown) == 100
    assert "http://x/5/5" not in shown and "http://x/11/11" in shown
    assert all(c in render_table(t) for c in (f"<{i}>" for i in shown))
