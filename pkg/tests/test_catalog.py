import textwrap

import pytest

from kgsparql.catalog import (
    CatalogError,
    DataFormatError,
    ItemRecord,
    load_catalog,
    load_item_records,
    write_item_records,
)
from kgsparql.iris import PrefixMap

HEADER = "iri\tlabel\tscore\tsynonyms\tinfos\n"
WD = PrefixMap({"wd": "http://www.wikidata.org/entity/"})


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_catalog(tmp_path):
    write(tmp_path / "c.yaml", textwrap.dedent("""
        graphs:
          - name: wikidata
            endpoint: https://qlever.example.org/api/wikidata
            prefixes: {wd: "http://www.wikidata.org/entity/"}
            entity_data: data/wd-entities.tsv
          - name: dblp
            endpoint: http://localhost:7001/sparql
        embedding: {provider: hashing, dimension: 32}
    """))
    cat = load_catalog(tmp_path / "c.yaml")
    assert cat.names() == ["wikidata", "dblp"]
    wd = cat.lookup("wikidata")
    assert wd.entity_data_path == (tmp_path / "data" / "wd-entities.tsv").resolve()
    assert wd.prefix_map.expand("wd:Q42") == "http://www.wikidata.org/entity/Q42"
    assert cat.embedding.dimension == 32
    with pytest.raises(KeyError, match="wikidata"):
        cat.lookup("freebase")


def test_endpoint_env_override(tmp_path, monkeypatch):
    write(tmp_path / "c.yaml", "graphs:\n  - {name: dblp-2024, endpoint: http://x/s}\n")
    monkeypatch.setenv("KGSPARQL_ENDPOINT_DBLP_2024", "http://localhost:7015/sparql")
    assert load_catalog(tmp_path / "c.yaml").lookup("dblp-2024").endpoint == "http://localhost:7015/sparql"
    monkeypatch.setenv("KGSPARQL_ENDPOINT_DBLP_2024", "gopher://nope")
    with pytest.raises(CatalogError, match="endpoint"):
        load_catalog(tmp_path / "c.yaml")


@pytest.mark.parametrize("body,msg", [
    ("graphs: []", "non-empty"),
    ("graphs:\n  - {name: a, endpoint: ftp://x}", "endpoint"),
    ("graphs:\n  - {name: a, endpoint: http://x/s}\n  - {name: a, endpoint: http://y/s}", "duplicate"),
    ("graphs:\n  - {name: a, endpoint: http://x/s, colour: red}", "colour"),
    ("graphs:\n  - {name: a, endpoint: http://x/s}\ngraphs: []", "duplicate"),
])
def test_invalid_catalogs(tmp_path, body, msg):
    write(tmp_path / "c.yaml", body)
    with pytest.raises(CatalogError, match=msg):
        load_catalog(tmp_path / "c.yaml")


def test_item_records_roundtrip(tmp_path):
    p = write(tmp_path / "e.tsv", HEADER
              + "wd:Q9047\tGottfried Wilhelm Leibniz\t202\tLeibniz; Gottfried Wilhelm von Leibniz; Leibniz\t"
                "German mathematician\n"
              + "<http://www.wikidata.org/entity/Q9191>\tRené Descartes\t147\tDescartes\t\n")
    recs = load_item_records(p, "entity", WD)
    assert recs[0] == ItemRecord("http://www.wikidata.org/entity/Q9047", "Gottfried Wilhelm Leibniz", 202,
                                 ("Leibniz", "Gottfried Wilhelm von Leibniz"), ("German mathematician",), "entity")
    assert recs[1].synonyms == ("Descartes",) and recs[1].infos == ()
    out = tmp_path / "out.tsv"
    write_item_records(recs, out, WD)
    assert load_item_records(out, "entity", WD) == recs


def test_empty_labels_skipped_with_warning(tmp_path, caplog):
    p = write(tmp_path / "e.tsv", HEADER + "wd:Q1\t\t5\t\t\nwd:Q2\tuniverse\t4\t\t\n")
    with caplog.at_level("WARNING"):
        recs = load_item_records(p, "entity", WD)
    assert [r.label for r in recs] == ["universe"]
    assert "skipped 1" in caplog.text


@pytest.mark.parametrize("rows,line,msg", [
    ("wd:Q1\ta\t1\t\n", 2, "5 columns"),
    ("wd:Q1\ta\tmany\t\t\n", 2, "integer"),
    ("wd:Q1\ta\t-1\t\t\n", 2, "range"),
    ("wd:Q1\ta\t1\t\t\nwd:Q2\tb\t3\t\t\n", 3, "descending"),
    ("wd:Q1\ta\t3\t\t\nwd:Q1\tb\t1\t\t\n", 3, "duplicate"),
    ("foo:Q1\ta\t3\t\t\n", 2, "prefix"),
])
def test_malformed_rows_report_line(tmp_path, rows, line, msg):
    p = write(tmp_path / "e.tsv", HEADER + rows)
    with pytest.raises(DataFormatError, match=msg) as ei:
        load_item_records(p, "entity", WD)
    assert ei.value.line == line
    assert f":{line}:" in str(ei.value)
