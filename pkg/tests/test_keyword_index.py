import random

import pytest
from oracles import keyword_ranking

from kgsparql.catalog import ItemRecord
from kgsparql.keyword_index import KeywordIndex, score_alias, tokenize


def rec(iri, label, score=0, synonyms=()):
    return ItemRecord(f"http://ex.org/{iri}", label, score, tuple(synonyms), (), "entity")


ALBERTS = [
    rec("falk", "Peter Falk", 40),
    rec("alberto", "Carlos Alberto", 30),
    rec("einstein", "Albert Einstein", 20),
    rec("finney", "Albert Finney", 10),
]

PHILOSOPHERS = [
    rec("Q9047", "Gottfried Wilhelm Leibniz", 202, ["Leibniz", "Gottfried Wilhelm von Leibniz"]),
    rec("Q9191", "René Descartes", 147, ["Descartes"]),
    rec("Q12117", "cereal grain", 30, ["grain"]),
    rec("Q9956", "Q", 20, ["letter Q"]),
]


@pytest.mark.parametrize("text,tokens", [
    ("Albert E", ["albert", "e"]),
    ("Gottfried Wilhelm von Leibniz", ["gottfried", "wilhelm", "von", "leibniz"]),
    ("Q", ["q"]),
    ("  rock-n-roll__Hall  ", ["rock", "n", "roll", "hall"]),
    ("", []),
])
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


def test_tokenize_normalizes_unicode():
    assert tokenize("René") == tokenize("René") == ["rené"]


@pytest.mark.parametrize("alias,expected", [
    (["albert", "einstein"], 3),
    (["albert", "finney"], 2),
    (["carlos", "alberto"], 1),
    (["peter", "falk"], 0),
])
def test_score_alias(alias, expected):
    assert score_alias(["albert", "e"], alias) == expected


def test_proper_prefix_does_not_double_count():
    assert score_alias(["albert"], ["albert"]) == 2
    assert score_alias(["alb"], ["albert", "alb"]) == 2


def test_albert_e_example():
    idx = KeywordIndex.build(ALBERTS)
    hits = idx.search("Albert E")
    assert [h.item.label for h in hits] == ["Albert Einstein", "Albert Finney", "Carlos Alberto"]
    assert [h.match_score for h in hits] == [3, 2, 1]
    assert [h.rank for h in hits] == [1, 2, 3]


def test_synonym_match():
    idx = KeywordIndex.build(PHILOSOPHERS)
    assert idx.search("leibniz")[0].item.iri.endswith("Q9047")


def test_popularity_breaks_ties():
    idx = KeywordIndex.build([rec("b", "Shared Name", 147), rec("a", "Shared Name", 202)])
    assert [h.item.score for h in idx.search("shared")] == [202, 147]


def test_iri_breaks_remaining_ties():
    idx = KeywordIndex.build([rec("z", "Same", 5), rec("a", "Same", 5), rec("m", "Same", 5)])
    assert [h.item.iri[-1] for h in idx.search("same")] == ["a", "m", "z"]


def test_empty_query_and_bad_k():
    idx = KeywordIndex.build(ALBERTS)
    assert list(idx.search("  ... ")) == []
    with pytest.raises(ValueError):
        idx.search("albert", k=0)


def test_restrict_to():
    idx = KeywordIndex.build(ALBERTS)
    allowed = {"http://ex.org/finney", "http://ex.org/falk"}
    hits = idx.search("Albert E", restrict_to=allowed)
    assert [h.item.label for h in hits] == ["Albert Finney"]
    assert list(idx.search("Albert", restrict_to=set())) == []


def test_candidate_cap_flags_approximate():
    items = [rec(f"i{i:03d}", f"alpha{i}", 0) for i in range(50)]
    idx = KeywordIndex.build(items)
    assert not idx.search("alpha").approximate
    capped = idx.search("alpha", candidate_cap=10)
    assert capped.approximate
    assert len(capped) <= 10


def test_save_load_roundtrip(tmp_path):
    idx = KeywordIndex.build(PHILOSOPHERS + ALBERTS)
    path = tmp_path / "ent.idx"
    idx.save(path)
    for use_mmap in (False, True):
        loaded = KeywordIndex.load(path, use_mmap=use_mmap)
        for q in ["albert e", "leib", "q", "grain", "des"]:
            assert [(h.item, h.match_score) for h in loaded.search(q)] == \
                   [(h.item, h.match_score) for h in idx.search(q)]


def test_load_rejects_wrong_magic_and_version(tmp_path):
    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"NOPE" + b"\0" * 64)
    with pytest.raises(ValueError):
        KeywordIndex.load(bad)
    idx = KeywordIndex.build(ALBERTS)
    good = tmp_path / "good.idx"
    idx.save(good)
    data = bytearray(good.read_bytes())
    data[4] = 99
    good.write_bytes(bytes(data))
    with pytest.raises(ValueError, match="version"):
        KeywordIndex.load(good)


def test_matches_oracle_on_random_corpus():
    rng = random.Random(3)
    words = ["ab", "abc", "abcd", "b", "ba", "bab", "c", "ca", "x", "xy"]
    items = [rec(f"e{i}", " ".join(rng.choices(words, k=rng.randint(1, 3))), rng.randint(0, 3),
                 [" ".join(rng.choices(words, k=2)) for _ in range(rng.randint(0, 2))]) for i in range(300)]
    idx = KeywordIndex.build(items)
    for _ in range(50):
        q = " ".join(rng.choices(words + ["a", "x"], k=rng.randint(1, 3)))
        got = [(h.item.iri, h.match_score) for h in idx.search(q, k=15)]
        assert got == keyword_ranking(items, q, 15)
