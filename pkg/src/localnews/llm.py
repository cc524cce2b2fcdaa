"""Prompt construction, LLM calls and answer post-processing."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import httpx

from .gazetteer import Gazetteer
from .kg import KGTriplet, format_triplets
from .model import AnswerSource, Article, Diagnostics, LocationAnswer

logger = logging.getLogger(__name__)

PROMPT_PREFIX = resources.files("localnews").joinpath("data/prompt_prefix.txt").read_text(encoding="utf-8")
ENRICHMENT_INSTRUCTION = (
    "When a Knowledge Graph provides a triplet (entity, relation, entity), "
    "use it to determine the location related to the article."
)
ANSWER_FIELDS = ("item_city", "item_state", "item_country")


def prompt_digest(prompt_text: str) -> str:
    return hashlib.sha256(prompt_text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PromptRequest:
    article_id: str
    prompt_text: str
    prompt_key: str
    enriched: bool = False

    def to_dict(self) -> dict:
        return {"article_id": self.article_id, "prompt_text": self.prompt_text,
                "prompt_key": self.prompt_key, "enriched": self.enriched}

    @classmethod
    def from_dict(cls, data: Mapping) -> "PromptRequest":
        text = data["prompt_text"]
        key = data.get("prompt_key") or prompt_digest(text)
        if key != prompt_digest(text):
            raise ValueError(f"prompt_key mismatch for article {data.get('article_id')!r}")
        return cls(data["article_id"], text, key, bool(data.get("enriched", False)))


@dataclass(frozen=True)
class LLMRawResponse:
    article_id: str
    run_index: int
    body: str


def article_payload(article: Article, triplets: Sequence[KGTriplet] = ()) -> str:
    payload = {"title": article.title, "description": article.description}
    if triplets:
        payload["KG"] = format_triplets(triplets)
    return json.dumps(payload, indent=2, ensure_ascii=False)


def build_prompt(article: Article, triplets: Sequence[KGTriplet] = ()) -> PromptRequest:
    """Few-shot classification prompt for one article.

    The instruction prefix is used verbatim. With triplets, the enrichment
    instruction follows the prefix and the payload gains a ``KG`` entry.
    """
    if not article.title.strip():
        raise ValueError("article title must be non-empty")
    parts = [PROMPT_PREFIX]
    if triplets:
        parts.append(ENRICHMENT_INSTRUCTION + "\n")
    parts.append(article_payload(article, triplets) + "\n")
    text = "\n".join(parts)
    return PromptRequest(article.id, text, prompt_digest(text), bool(triplets))


class LLMError(Exception):
    retryable = True

    def __init__(self, message: str, run_index: int | None = None):
        super().__init__(message)
        self.run_index = run_index


class LLMTransientError(LLMError):
    """Timeout or non-success reply; the same request may succeed later."""


class LLMBudgetExhausted(LLMError):
    """Quota or spend limit reached. Retrying will not help."""

    retryable = False


class LLMEndpoint(Protocol):
    def complete(self, request: PromptRequest, run_index: int) -> str: ...


class ChatCompletionEndpoint:
    """Chat-completion style HTTP endpoint. Temperature is left to the server default."""

    def __init__(self, url: str, model: str, *, api_key: str | None = None,
                 api_key_env: str = "LOCALNEWS_LLM_API_KEY", timeout: float = 60.0,
                 client: httpx.Client | None = None):
        self.url = url
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env)
        self.timeout = timeout
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, request: PromptRequest, run_index: int) -> str:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        body = {"model": self.model,
                "messages": [{"role": "user", "content": request.prompt_text}]}
        try:
            resp = self._client.post(self.url, json=body, headers=headers, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise LLMTransientError(f"LLM request failed: {exc}", run_index) from exc
        if resp.status_code == 402 or (resp.status_code == 429 and "quota" in resp.text.lower()):
            raise LLMBudgetExhausted(f"LLM budget exhausted: {resp.text[:200]}", run_index)
        if resp.status_code >= 400:
            raise LLMTransientError(f"LLM endpoint returned {resp.status_code}", run_index)
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise LLMTransientError(f"unexpected LLM response shape: {exc}", run_index) from exc


NULL_BODY = '{"item_city": "null", "item_state": "null", "item_country": "null"}'


class MockLLM:
    """Scripted endpoint for tests and offline runs.

    ``scripts`` maps a prompt_key or article_id to the bodies returned for
    runs 1..N (the last body repeats if the list is short). ``failures``
    maps ``(key, run_index)`` to how many attempts fail before success; a
    negative count fails forever. Every attempt is appended to ``calls``.
    """

    def __init__(self, scripts: Mapping[str, Sequence[str] | str] | None = None,
                 failures: Mapping[tuple[str, int], int] | None = None,
                 default: str | None = NULL_BODY, latency: float = 0.0,
                 budget: int | None = None):
        self.scripts = {k: [v] if isinstance(v, str) else list(v) for k, v in (scripts or {}).items()}
        self.failures = dict(failures or {})
        self.default = default
        self.latency = latency
        self.budget = budget
        self.calls: list[tuple[str, str, int]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_json(cls, path: str | Path, **kwargs) -> "MockLLM":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh), **kwargs)

    def _key(self, request: PromptRequest) -> str | None:
        for key in (request.prompt_key, request.article_id):
            if key in self.scripts:
                return key
        return None

    def complete(self, request: PromptRequest, run_index: int) -> str:
        if self.latency:
            time.sleep(self.latency)
        key = self._key(request)
        with self._lock:
            if self.budget is not None and len(self.calls) >= self.budget:
                raise LLMBudgetExhausted("mock budget exhausted", run_index)
            self.calls.append((request.prompt_key, request.article_id, run_index))
            for fkey in (request.prompt_key, request.article_id):
                remaining = self.failures.get((fkey, run_index))
                if remaining:
                    if remaining > 0:
                        self.failures[(fkey, run_index)] = remaining - 1
                    raise LLMTransientError(f"scripted failure for {fkey} run {run_index}", run_index)
        if key is None:
            if self.default is None:
                raise LLMTransientError(f"no script for {request.article_id}", run_index)
            return self.default
        bodies = self.scripts[key]
        return bodies[min(run_index, len(bodies)) - 1]

    def prompt_calls(self) -> Counter:
        """Number of attempts per prompt_key."""
        with self._lock:
            return Counter(k for k, _, _ in self.calls)


def call_llm(endpoint: LLMEndpoint, request: PromptRequest, runs: int = 3, *,
             max_retries: int = 2, backoff: float = 0.5,
             sleep: Callable[[float], None] = time.sleep,
             max_concurrency: int = 1) -> list[LLMRawResponse]:
    """Send ``request`` ``runs`` times; transient failures are retried with exponential backoff."""
    if runs < 1:
        raise ValueError("runs must be >= 1")

    def one_run(run_index: int) -> LLMRawResponse:
        attempt = 0
        while True:
            try:
                body = endpoint.complete(request, run_index)
                return LLMRawResponse(request.article_id, run_index, body)
            except LLMBudgetExhausted:
                raise
            except LLMError as exc:
                if attempt >= max_retries:
                    raise LLMTransientError(
                        f"run {run_index} of {request.article_id} failed after {attempt + 1} attempts: {exc}",
                        run_index) from exc
                delay = backoff * (2 ** attempt)
                logger.info("LLM run %d for %s failed (%s); retrying in %.2fs",
                            run_index, request.article_id, exc, delay)
                attempt += 1
                sleep(delay)

    indexes = range(1, runs + 1)
    if max_concurrency <= 1 or runs == 1:
        return [one_run(i) for i in indexes]
    with ThreadPoolExecutor(max_workers=min(max_concurrency, runs)) as pool:
        return list(pool.map(one_run, indexes))


def _object_spans(text: str):
    """Yield candidate ``{...}`` substrings, brace-balanced outside string literals."""
    for start, ch in enumerate(text):
        if ch != "{":
            continue
        depth, in_str, esc = 0, False, False
        for i in range(start, len(text)):
            c = text[i]
            if in_str:
                if esc:
                    esc = False
                elif c == "\\":
                    esc = True
                elif c == '"':
                    in_str = False
            elif c == '"':
                in_str = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    yield text[start:i + 1]
                    break


_TRAILING_COMMA = re.compile(r",\s*([}\]])")
_FIELD = re.compile(r'"(item_city|item_state|item_country)"\s*:\s*(null|"(?:[^"\\]|\\.)*"|\[[^\]]*\])')


def _load_object(candidate: str) -> dict | None:
    for text in (candidate, _TRAILING_COMMA.sub(r"\1", candidate)):
        try:
            obj = json.loads(text)
        except ValueError:
            continue
        if isinstance(obj, dict):
            return obj
    fields = {}
    for name, raw in _FIELD.findall(candidate):
        try:
            fields.setdefault(name, json.loads(raw))
        except ValueError:
            continue
    return fields or None


def parse_response(body: str, source: AnswerSource = AnswerSource.LLM,
                   diagnostics: Diagnostics | None = None) -> LocationAnswer | None:
    """First JSON-ish object in ``body`` as a LocationAnswer; None if nothing parses.

    Tolerates leading prose, trailing commas and list-valued fields (the
    first element is kept). ``"null"`` and missing keys become absent.
    """
    for candidate in _object_spans(body or ""):
        obj = _load_object(candidate)
        if obj is None:
            continue
        return LocationAnswer(obj.get("item_city"), obj.get("item_state"),
                              obj.get("item_country"), source)
    if diagnostics is not None:
        diagnostics.add(f"unparsable LLM body: {body[:80]!r}")
    return None


def validate_answer(answer: LocationAnswer, gazetteer: Gazetteer,
                    diagnostics: Diagnostics | None = None) -> LocationAnswer:
    """Drop fields that are unknown or inconsistent with the gazetteer's containment.

    Checks run top-down: country must exist, the state must exist and sit in
    the country, the city must exist and sit in the surviving state. A
    "state" that is really a county is dropped with a county-confusion note.
    """
    diag = diagnostics if diagnostics is not None else Diagnostics()
    city, state, country = answer.city, answer.state, answer.country

    if country and not gazetteer.is_a(country, "country"):
        diag.add(f"unknown country {country!r} dropped")
        country = None
    if state:
        if gazetteer.county_only(state):
            diag.add(f"county-confusion: {state!r} is a county, not a state")
            state = None
        elif not gazetteer.is_a(state, "state"):
            diag.add(f"unknown state {state!r} dropped")
            state = None
        elif country and not gazetteer.state_in_country(state, country):
            diag.add(f"containment violation: state {state!r} not in {country!r}")
            state = None
    if city:
        if not gazetteer.is_a(city, "city"):
            diag.add(f"unknown city {city!r} dropped")
            city = None
        elif state and not gazetteer.city_in_state(city, state):
            diag.add(f"containment violation: city {city!r} not in {state!r}")
            city = None
    return LocationAnswer(city, state, country, answer.source)


def merge_runs(answers: Sequence[LocationAnswer | None]) -> LocationAnswer | None:
    """Per-field majority vote across runs.

    Absent values do not vote. Ties go to the value carried by the answer
    with the most filled fields, then to the earliest run.
    """
    if not answers:
        raise ValueError("merge_runs needs at least one answer")
    present = [(i, a) for i, a in enumerate(answers) if a is not None]
    if not present:
        return None

    def vote(field_name: str) -> str | None:
        counts = Counter(getattr(a, field_name) for _, a in present if getattr(a, field_name))
        if not counts:
            return None
        top = max(counts.values())
        tied = {v for v, c in counts.items() if c == top}
        best = min(((-a.filled(), i, getattr(a, field_name)) for i, a in present
                    if getattr(a, field_name) in tied))
        return best[2]

    source = present[0][1].source
    return LocationAnswer(vote("city"), vote("state"), vote("country"), source)


@dataclass
class LLMOutcome:
    """Everything produced while resolving one prompt."""

    request: PromptRequest
    responses: list[LLMRawResponse] = field(default_factory=list)
    answers: list[LocationAnswer | None] = field(default_factory=list)
    merged: LocationAnswer | None = None
    diagnostics: Diagnostics = field(default_factory=Diagnostics)


def resolve_prompt(endpoint: LLMEndpoint, request: PromptRequest, gazetteer: Gazetteer | None,
                   runs: int = 3, **call_kwargs) -> LLMOutcome:
    """call_llm, then parse and validate each run, then merge."""
    outcome = LLMOutcome(request)
    source = AnswerSource.LLM_KG if request.enriched else AnswerSource.LLM
    outcome.responses = call_llm(endpoint, request, runs, **call_kwargs)
    for resp in outcome.responses:
        answer = parse_response(resp.body, source, outcome.diagnostics)
        if answer is not None and gazetteer is not None:
            answer = validate_answer(answer, gazetteer, outcome.diagnostics)
        outcome.answers.append(answer)
    outcome.merged = merge_runs(outcome.answers)
    return outcome
