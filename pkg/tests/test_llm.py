import itertools
import json
from collections import Counter

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from localnews.fixtures import ARTILES_REPLY, EXAMPLE_1_REPLY, EXAMPLE_2_REPLY, NULL_REPLY
from localnews.kg import KGTriplet
from localnews.llm import (
    PROMPT_PREFIX,
    ChatCompletionEndpoint,
    LLMBudgetExhausted,
    LLMTransientError,
    MockLLM,
    PromptRequest,
    build_prompt,
    call_llm,
    merge_runs,
    parse_response,
    prompt_digest,
    resolve_prompt,
    validate_answer,
)
from localnews.model import Article, Diagnostics, LocationAnswer

from conftest import ASSETS

GOLDEN = ASSETS / "golden"
CASES = [("artiles", "artiles"), ("dubose", "example1"), ("desantis", "example2")]


def A(city=None, state=None, country=None):
    return LocationAnswer(city, state, country)


@pytest.mark.parametrize("article_id, stem", CASES)
@pytest.mark.parametrize("enrich", [False, True])
def test_prompt_matches_golden(world, article_id, stem, enrich):
    clf = world.classifier()
    req = clf.prompt_for(world.article(article_id), enrich)
    expected = (GOLDEN / f"{stem}_{'enriched' if enrich else 'standalone'}.txt").read_bytes()
    assert req.prompt_text.encode("utf-8") == expected
    assert req.enriched is enrich
    assert req.prompt_key == prompt_digest(req.prompt_text)


def test_prefix_shape():
    assert PROMPT_PREFIX.startswith("You are a newspaper editor.")
    assert all(f"\n{i}. " in PROMPT_PREFIX for i in range(1, 7))
    assert "Example 1:" in PROMPT_PREFIX and "Example 2:" in PROMPT_PREFIX


def test_empty_triplets_is_standalone():
    a = Article("x", "Title", "Desc")
    assert build_prompt(a, []).prompt_text == build_prompt(a).prompt_text
    assert not build_prompt(a, []).enriched


def test_same_text_same_key():
    a = build_prompt(Article("x", "T", "D"))
    b = build_prompt(Article("y", "T", "D"))
    assert a.prompt_key == b.prompt_key and a.article_id != b.article_id


def test_enriched_payload_is_json():
    req = build_prompt(Article("x", "T", 'say "hi"'), [KGTriplet("A", "b", "C")])
    payload = json.loads(req.prompt_text.rsplit("\n\n", 1)[1])
    assert payload == {"title": "T", "description": 'say "hi"', "KG": "[('A', 'b', 'C')]"}


def test_prompt_request_roundtrip_checks_digest():
    req = build_prompt(Article("x", "T"))
    assert PromptRequest.from_dict(req.to_dict()) == req
    bad = {**req.to_dict(), "prompt_text": req.prompt_text + " "}
    with pytest.raises(ValueError):
        PromptRequest.from_dict(bad)


def test_blank_title_rejected():
    with pytest.raises(ValueError):
        Article("x", " ")


# call_llm

def _req():
    return build_prompt(Article("a1", "Title"))


def test_scripted_body_each_run():
    req = _req()
    out = call_llm(MockLLM({req.prompt_key: ARTILES_REPLY}), req, 3)
    assert [r.body for r in out] == [ARTILES_REPLY] * 3
    assert [r.run_index for r in out] == [1, 2, 3]
    assert len(call_llm(MockLLM(), req, 1)) == 1
    with pytest.raises(ValueError):
        call_llm(MockLLM(), req, 0)


def test_retry_on_run_two():
    req = _req()
    mock = MockLLM({req.prompt_key: ["r1", "r2", "r3"]}, failures={(req.prompt_key, 2): 1})
    sleeps = []
    out = call_llm(mock, req, 3, max_retries=1, backoff=0.5, sleep=sleeps.append)
    assert [r.body for r in out] == ["r1", "r2", "r3"]
    assert len(mock.calls) == 4
    assert [c[2] for c in mock.calls] == [1, 2, 2, 3]
    assert sleeps == [0.5]


def test_backoff_is_exponential_and_error_carries_run():
    req = _req()
    mock = MockLLM(failures={(req.prompt_key, 3): -1})
    sleeps = []
    with pytest.raises(LLMTransientError) as info:
        call_llm(mock, req, 3, max_retries=2, backoff=1.0, sleep=sleeps.append)
    assert info.value.run_index == 3
    assert sleeps == [1.0, 2.0]


def test_budget_is_terminal():
    req = _req()
    mock = MockLLM(budget=2)
    with pytest.raises(LLMBudgetExhausted) as info:
        call_llm(mock, req, 3, sleep=lambda s: None)
    assert not info.value.retryable and len(mock.calls) == 2


def test_concurrent_runs_keep_order():
    req = _req()
    out = call_llm(MockLLM({req.prompt_key: ["a", "b", "c"]}, latency=0.01), req, 3, max_concurrency=3)
    assert [r.body for r in out] == ["a", "b", "c"]


def _chat(handler, monkeypatch):
    monkeypatch.setenv("LOCALNEWS_LLM_API_KEY", "sk-test")
    return ChatCompletionEndpoint("http://llm.test/v1/chat/completions", "m",
                                  client=httpx.Client(transport=httpx.MockTransport(handler)))


def test_chat_endpoint(monkeypatch):
    seen = {}

    def handler(request):
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": NULL_REPLY}}]})

    req = _req()
    assert _chat(handler, monkeypatch).complete(req, 1) == NULL_REPLY
    assert seen["auth"] == "Bearer sk-test"
    assert seen["body"]["messages"][-1]["content"] == req.prompt_text
    assert "temperature" not in seen["body"]


@pytest.mark.parametrize("response, exc", [
    (httpx.Response(500), LLMTransientError),
    (httpx.Response(429, json={"error": {"message": "rate limited"}}), LLMTransientError),
    (httpx.Response(429, json={"error": {"code": "insufficient_quota"}}), LLMBudgetExhausted),
    (httpx.Response(402), LLMBudgetExhausted),
    (httpx.Response(200, json={"choices": []}), LLMTransientError),
])
def test_chat_endpoint_errors(monkeypatch, response, exc):
    with pytest.raises(exc) as info:
        _chat(lambda r: response, monkeypatch).complete(_req(), 2)
    assert info.value.run_index == 2


def test_chat_timeout(monkeypatch):
    def handler(request):
        raise httpx.ConnectTimeout("slow", request=request)

    with pytest.raises(LLMTransientError):
        _chat(handler, monkeypatch).complete(_req(), 1)


# parse_response

def test_parse_worked_example():
    assert parse_response(ARTILES_REPLY) == A("miami", "florida", "united states")


@pytest.mark.parametrize("body", [EXAMPLE_1_REPLY, EXAMPLE_2_REPLY])
def test_parse_few_shot_outputs(body):
    # both examples carry a trailing comma and one has "united States"
    assert parse_response(body) == A("miami", "florida", "united states")


def test_parse_null_sentinels():
    ans = parse_response(NULL_REPLY)
    assert ans is not None and ans.is_empty


def test_parse_prose_prefix_matches_bare():
    bare = '{"item_city": "Tampa", "item_state": "FL", "item_country": "USA"}'
    assert parse_response("Sure! Here is the answer:\n" + bare + "\nHope it helps") == parse_response(bare)


def test_parse_lists_and_missing():
    ans = parse_response('{"item_city": ["Tampa", "Miami"], "item_state": "Florida"}')
    assert ans == A("tampa", "florida", None)


def test_parse_garbage():
    diag = Diagnostics()
    assert parse_response("I cannot answer that.", diagnostics=diag) is None
    assert len(diag) == 1
    assert parse_response("") is None


def test_parse_broken_json_falls_back_to_fields():
    body = '{"title": "He said "hi"", "item_city": "miami", "item_state": "florida"}'
    assert parse_response(body) == A("miami", "florida")


# validate_answer

def test_validate_consistent_unchanged(world):
    a = A("miami", "florida", "united states")
    assert validate_answer(a, world.gazetteer) == a
    assert validate_answer(A(), world.gazetteer) == A()


def test_validate_drops_city_outside_state(world):
    diag = Diagnostics()
    out = validate_answer(A("miami", "texas", "united states"), world.gazetteer, diag)
    assert out == A(None, "texas", "united states")
    assert any("containment" in d for d in diag)


def test_validate_drops_unknown_and_county(world):
    diag = Diagnostics()
    out = validate_answer(A("atlantis", "miami dade", "united states"), world.gazetteer, diag)
    assert out == A(None, None, "united states")
    assert any("county-confusion" in d for d in diag)
    assert validate_answer(A("miami", "florida", "narnia"), world.gazetteer) == A("miami", "florida")


names = st.sampled_from(["miami", "tampa", "henderson", "houston", "charlotte", "atlantis", "florida",
                         "nevada", "texas", "sarasota", "clark county", "united states", "georgia", None])


@given(names, names, names)
def test_validate_properties(world, city, state, country):
    gaz = world.gazetteer
    out = validate_answer(A(city, state, country), gaz)
    for field in ("city", "state", "country"):
        if getattr(out, field):
            assert getattr(out, field) == getattr(A(city, state, country), field)
    if out.city and out.state:
        assert gaz.city_in_state(out.city, out.state)


# merge_runs

def test_merge_examples():
    m = A("miami", "florida")
    assert merge_runs([m, m, m]) == m
    assert merge_runs([m, m, A("tampa", "florida")]) == m
    assert merge_runs([None, None, m]) == m
    assert merge_runs([None, None]) is None
    with pytest.raises(ValueError):
        merge_runs([])


def test_merge_tie_breaks():
    rich = A("tampa", "florida", "united states")
    assert merge_runs([A("miami"), rich]).city == "tampa"
    assert merge_runs([A("miami", "florida"), A("tampa", "florida")]).city == "miami"


def brute_force_majority(answers, field):
    """Enumerate values, keep those with the top count, then apply the documented tie order."""
    values = [getattr(a, field) for a in answers if a is not None and getattr(a, field)]
    if not values:
        return None
    counts = Counter(values)
    best = [v for v in counts if counts[v] == max(counts.values())]
    for i, a in sorted(enumerate(answers), key=lambda p: (-(p[1].filled() if p[1] else -1), p[0])):
        if a is not None and getattr(a, field) in best:
            return getattr(a, field)


answers = st.one_of(st.none(), st.builds(A, st.sampled_from(["miami", "tampa", None]),
                                         st.sampled_from(["florida", "texas", None]),
                                         st.sampled_from(["united states", None])))


@given(st.lists(answers, min_size=1, max_size=5))
def test_merge_matches_oracle(runs):
    merged = merge_runs(runs)
    if all(a is None for a in runs):
        assert merged is None
        return
    for field in ("city", "state", "country"):
        assert getattr(merged, field) == brute_force_majority(runs, field)


@given(st.lists(answers, min_size=1, max_size=5))
def test_merge_permutation_invariant_with_strict_majorities(runs):
    def strict(field):
        c = Counter(getattr(a, field) for a in runs if a and getattr(a, field))
        top = c.most_common(2)
        return not top or len(top) == 1 or top[0][1] > top[1][1]

    if not all(strict(f) for f in ("city", "state", "country")):
        return
    base = merge_runs(runs)
    for perm in itertools.islice(itertools.permutations(runs), 24):
        assert merge_runs(list(perm)) == base


def test_resolve_prompt_end_to_end(world):
    req = world.classifier().prompt_for(world.article("thompson"), False)
    outcome = resolve_prompt(world.mock_llm(), req, world.gazetteer, 3, sleep=lambda s: None)
    assert [a.city for a in outcome.answers] == ["miami", "miami", "tampa"]
    assert outcome.merged == A("miami", "florida", "united states")
