import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from localnews.classify import (
    FeatureVectorFragment,
    MissingDecision,
    UserGeo,
    decide_from_answer,
    emit_features,
    infer_newspaper_location,
    is_in_market,
    load_visits,
)
from localnews.model import Article, Label, LocalityDecision, LocationAnswer, MatchedOn, NewspaperProfile


def labels(world, model, ids, endpoint=None):
    clf = world.classifier(endpoint or world.mock_llm(), backoff=0)
    return {i: clf.classify(model, world.article(i), world.profiles[world.article(i).publisher_id])
            for i in ids}


def test_standalone_ner(world, miami):
    clf = world.classifier()
    explicit = Article("s", "Storm hits Florida coast")
    assert clf.classify_standalone_ner(explicit, miami).matched_on is MatchedOn.STATE
    people = Article("p", "Patrick Bainter testified", "Frank Artiles listened")
    assert clf.classify_standalone_ner(people, miami).label is Label.NATIONAL
    dolphins = Article("d", "The Dolphins rally late")
    assert clf.classify_standalone_ner(dolphins, miami).label is Label.NATIONAL


def test_kg_ner_team_chain(world, miami):
    d = world.classifier().classify_kg_ner(world.article("thompson"), miami)
    assert d.label is Label.LOCAL and d.matched_on is MatchedOn.CITY
    assert "Miami Dolphins" in d.evidence[0]


def test_kg_ner_artiles_via_description(world, miami):
    d = world.classifier().classify_kg_ner(world.article("artiles"), miami)
    assert d.label is Label.LOCAL and d.matched_on is MatchedOn.STATE
    assert "florida state representative" in d.evidence[0]


def test_kg_ner_no_linkable_entities(world, miami):
    d = world.classifier().classify_kg_ner(Article("z", "Markets were quiet today"), miami)
    assert d.label is Label.NATIONAL


def test_kg_ner_ignores_birthplace(world, miami):
    d = world.classifier().classify_kg_ner(world.article("swift"), miami)
    assert d.label is Label.NATIONAL


def test_decide_from_answer(miami):
    d = decide_from_answer("a", LocationAnswer("miami", "florida", "united states"), miami)
    assert (d.label, d.matched_on) == (Label.LOCAL, MatchedOn.CITY)
    sarasota = NewspaperProfile("s", "sarasota", "florida")
    assert decide_from_answer("a", LocationAnswer("charlotte", "north carolina"), sarasota).label is Label.NATIONAL
    d = decide_from_answer("a", LocationAnswer("charlotte", "florida"), sarasota)
    assert (d.label, d.matched_on) == (Label.LOCAL, MatchedOn.STATE)
    d = decide_from_answer("a", LocationAnswer(), miami)
    assert d.label is Label.NATIONAL and "no-answer" in d.diagnostics
    assert decide_from_answer("a", None, miami).label is Label.NATIONAL


def test_pluggable_predicate(miami):
    city_only = lambda ans, prof: MatchedOn.CITY if ans.city == prof.city else MatchedOn.NONE
    ans = LocationAnswer("tampa", "florida")
    assert decide_from_answer("a", ans, miami).is_local
    assert not decide_from_answer("a", ans, miami, city_only).is_local


def test_llm_models_on_worked_example(world):
    got = labels(world, "llm", ["artiles"])["artiles"]
    assert got.label is Label.NATIONAL
    got = labels(world, "kg_llm", ["artiles"])["artiles"]
    assert (got.label, got.matched_on) == (Label.LOCAL, MatchedOn.CITY)


def test_enrichment_without_triplets_is_identical(world, miami):
    clf = world.classifier()
    art = Article("q", "Markets were quiet today")
    assert clf.prompt_for(art, True) == clf.prompt_for(art, False)


def test_unknown_model(world, miami):
    with pytest.raises(ValueError):
        world.classifier().classify("gpt", world.article("artiles"), miami)


def test_missing_resource(miami):
    from localnews.classify import LocalNewsClassifier

    with pytest.raises(RuntimeError):
        LocalNewsClassifier().classify_standalone_ner(Article("a", "t"), miami)


# monotonicity: every explicit NER hit survives graph enrichment

places = st.sampled_from(["Miami", "Florida", "Tampa", "Raleigh", "Henderson", "Coconut Grove", "Texas"])
people = st.sampled_from(["Skylar Thompson", "Taylor Swift", "Frank Artiles", "Ron DeSantis", "nobody"])
filler = st.sampled_from(["storm", "news", "the", "game", "budget"])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.one_of(places, people, filler), min_size=1, max_size=8),
       st.sampled_from(["miami-herald", "raleigh-observer", "sarasota-tribune"]))
def test_kg_ner_dominates_ner(world, words, publisher):
    art = Article("r", " ".join(words))
    profile = world.profiles[publisher]
    clf = world.classifier()
    if clf.classify_standalone_ner(art, profile).is_local:
        assert clf.classify_kg_ner(art, profile).is_local


def test_monotonicity_on_demo_corpus(world):
    ids = [a.id for a in world.corpus]
    ner = labels(world, "ner", ids)
    kg = labels(world, "kg_ner", ids)
    assert all(kg[i].is_local for i in ids if ner[i].is_local)


# newspaper location

def test_infer_clear_majority():
    p = infer_newspaper_location({("miami", "fl", 528): 900, ("tampa", "fl", 539): 100}, "mh")
    assert (p.city, p.state, p.dma_code) == ("miami", "florida", 528)


def test_infer_single_bucket():
    assert infer_newspaper_location({("Raleigh", "NC", None): 3}).city == "raleigh"


def test_infer_tie_breaks():
    # equal buckets: state x has more visitors overall, then lexicographic city
    p = infer_newspaper_location({("a", "x", None): 50, ("b", "x", None): 50, ("c", "y", None): 50})
    assert (p.city, p.state) == ("a", "x")
    # the largest bucket wins before any tie-break applies
    p = infer_newspaper_location({("a", "x", None): 50, ("b", "x", None): 50, ("c", "y", None): 60})
    assert (p.city, p.state) == ("c", "y")


def test_infer_errors():
    with pytest.raises(ValueError):
        infer_newspaper_location({})
    with pytest.raises(ValueError):
        infer_newspaper_location({("a", "x", None): -1})


hist = st.dictionaries(st.tuples(st.sampled_from("abcd"), st.sampled_from("xyz"), st.just(None)),
                       st.integers(1, 40), min_size=1, max_size=8)


@given(hist, st.integers(1, 50))
def test_infer_scale_invariant(h, k):
    scaled = {key: v * k for key, v in h.items()}
    assert infer_newspaper_location(h) == infer_newspaper_location(scaled)


@given(hist)
def test_infer_matches_exhaustive_oracle(h):
    totals = {}
    for (_, s, _), v in h.items():
        totals[s] = totals.get(s, 0) + v
    top = max(h.values())
    tied = [k for k, v in h.items() if v == top]
    best_state_total = max(totals[s] for _, s, _ in tied)
    tied = sorted(k for k in tied if totals[k[1]] == best_state_total)
    p = infer_newspaper_location(h)
    assert (p.city, p.state) == tied[0][:2]


def test_load_visits(tmp_path):
    path = tmp_path / "v.csv"
    path.write_text("publisher_id,city,state,dma_code,count\np,miami,fl,528,5\np,miami,fl,528,2\nq,tampa,fl,,1\n")
    v = load_visits(path)
    assert v["p"][("miami", "fl", 528)] == 7 and v["q"][("tampa", "fl", None)] == 1


# in-market users and features

def test_in_market(miami):
    assert is_in_market(UserGeo("united states", 528), miami)
    assert is_in_market(UserGeo("Canada", geo_affinity="Florida"), miami)
    assert not is_in_market(UserGeo("us", 539, "miami"), miami)
    assert is_in_market(UserGeo("us", None, "miami"), miami)
    assert not is_in_market(UserGeo("france"), miami)
    with pytest.raises(ValueError):
        UserGeo("canada", 528)


def test_emit_features(miami):
    art = Article("a", "t")
    local = lambda _: LocalityDecision("a", Label.LOCAL, MatchedOn.CITY)
    nat = lambda _: LocalityDecision("a", Label.NATIONAL)
    assert emit_features(art, miami, UserGeo("us", 528), local) == FeatureVectorFragment(True, True)
    assert emit_features(art, miami, UserGeo("us", 1), nat) == FeatureVectorFragment(False, False)
    assert emit_features(art, miami, UserGeo("spain", geo_affinity="miami"), local) == FeatureVectorFragment(True, True)
    with pytest.raises(MissingDecision):
        emit_features(art, miami, UserGeo("us", 528), lambda _: None)
