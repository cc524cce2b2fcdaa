"""The four locality classifiers and the two recommendation features built on them."""

from __future__ import annotations

import csv
import logging
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

from .gazetteer import Gazetteer
from .kg import (
    KnowledgeGraph,
    link_entity,
    lookup_candidates,
    person_evidence,
    traverse_p131,
    triplets_for_prompt,
)
from .llm import LLMEndpoint, LLMOutcome, build_prompt, resolve_prompt
from .model import (
    Article,
    Diagnostics,
    Label,
    LocalityDecision,
    LocationAnswer,
    MatchedOn,
    NewspaperProfile,
    national,
    normalize_place,
)
from .ner import EntityExtractor, EntityMention, EntityTag, ner_local_label

logger = logging.getLogger(__name__)

MODELS = ("ner", "kg_ner", "llm", "kg_llm")

LocalityPredicate = Callable[[LocationAnswer, NewspaperProfile], MatchedOn]


def city_or_state_match(answer: LocationAnswer, profile: NewspaperProfile) -> MatchedOn:
    """Equality on the city, else on the state."""
    if answer.city and profile.city and answer.city == profile.city:
        return MatchedOn.CITY
    if answer.state and profile.state and answer.state == profile.state:
        return MatchedOn.STATE
    return MatchedOn.NONE


def decide_from_answer(article_id: str, answer: LocationAnswer | None, profile: NewspaperProfile,
                       predicate: LocalityPredicate = city_or_state_match,
                       diagnostics=()) -> LocalityDecision:
    diagnostics = tuple(diagnostics)
    if answer is None or answer.is_empty:
        return national(article_id, *diagnostics, "no-answer")
    matched = predicate(answer, profile)
    evidence = tuple(f"{k}={v}" for k, v in
                     (("city", answer.city), ("state", answer.state), ("country", answer.country)) if v)
    label = Label.NATIONAL if matched is MatchedOn.NONE else Label.LOCAL
    return LocalityDecision(article_id, label, matched, evidence, diagnostics)


def _mentions_place(text: str, place: str | None) -> bool:
    if not place:
        return False
    return re.search(rf"(?<!\w){re.escape(place)}(?!\w)", normalize_place(text)) is not None


class LocalNewsClassifier:
    """Bundles the NER tagger, knowledge graph, gazetteer and LLM endpoint.

    Any resource a strategy does not need may be left as None.
    """

    def __init__(self, ner: EntityExtractor | None = None, kg: KnowledgeGraph | None = None,
                 gazetteer: Gazetteer | None = None, endpoint: LLMEndpoint | None = None, *,
                 runs: int = 3, max_retries: int = 2, backoff: float = 0.5,
                 max_hops: int = 4, predicate: LocalityPredicate = city_or_state_match):
        if runs < 1:
            raise ValueError("runs must be >= 1")
        self.ner = ner
        self.kg = kg
        self.gazetteer = gazetteer
        self.endpoint = endpoint
        self.runs = runs
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_hops = max_hops
        self.predicate = predicate

    def _require(self, name: str):
        value = getattr(self, name)
        if value is None:
            raise RuntimeError(f"classifier was built without a {name}")
        return value

    def mentions(self, article: Article) -> list[EntityMention]:
        return self._require("ner").extract_entities(article)

    def classify_standalone_ner(self, article: Article, profile: NewspaperProfile) -> LocalityDecision:
        return ner_local_label(article.id, self.mentions(article), profile)

    def classify_kg_ner(self, article: Article, profile: NewspaperProfile) -> LocalityDecision:
        kg = self._require("kg")
        mentions = self.mentions(article)
        explicit = ner_local_label(article.id, mentions, profile)
        if explicit.is_local:
            # an explicit match is the hop-0 case of the walk below
            return explicit
        diag = Diagnostics()
        for mention in mentions:
            if mention.tag is EntityTag.MISC:
                continue
            candidates = lookup_candidates(kg, mention.surface, mention.tag)
            if not candidates:
                continue
            entity = link_entity(candidates)
            if mention.tag is EntityTag.PERSON:
                evidence = person_evidence(kg, entity)
                desc = evidence.description or ""
                for place, on in ((profile.city, MatchedOn.CITY), (profile.state, MatchedOn.STATE)):
                    if _mentions_place(desc, place):
                        return LocalityDecision(article.id, Label.LOCAL, on,
                                                (f"{entity.label}: personDescription '{desc}'",),
                                                tuple(diag))
                for team in evidence.teams:
                    match = traverse_p131(kg, team, profile.city, profile.state, self.max_hops, diag)
                    if match:
                        path = " -> ".join(match.path)
                        return LocalityDecision(article.id, Label.LOCAL, match.matched_on,
                                                (f"{entity.label}: member of {path}",), tuple(diag))
                continue
            match = traverse_p131(kg, entity, profile.city, profile.state, self.max_hops, diag)
            if match:
                return LocalityDecision(article.id, Label.LOCAL, match.matched_on,
                                        (f"{mention.surface}: {' -> '.join(match.path)} ({match.hops} hops)",),
                                        tuple(diag))
        return national(article.id, *diag)

    def prompt_for(self, article: Article, enrich: bool):
        triplets = []
        if enrich:
            triplets = triplets_for_prompt(self._require("kg"), self.mentions(article), None, self.max_hops)
        return build_prompt(article, triplets)

    def resolve(self, article: Article, enrich: bool) -> LLMOutcome:
        request = self.prompt_for(article, enrich)
        return resolve_prompt(self._require("endpoint"), request, self.gazetteer, self.runs,
                              max_retries=self.max_retries, backoff=self.backoff)

    def classify_llm(self, article: Article, profile: NewspaperProfile, enrich: bool = False) -> LocalityDecision:
        outcome = self.resolve(article, enrich)
        return decide_from_answer(article.id, outcome.merged, profile, self.predicate,
                                  outcome.diagnostics)

    def classify(self, model: str, article: Article, profile: NewspaperProfile) -> LocalityDecision:
        if model == "ner":
            return self.classify_standalone_ner(article, profile)
        if model == "kg_ner":
            return self.classify_kg_ner(article, profile)
        if model == "llm":
            return self.classify_llm(article, profile, enrich=False)
        if model == "kg_llm":
            return self.classify_llm(article, profile, enrich=True)
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")


def infer_newspaper_location(visits: Mapping[tuple, int], publisher_id: str = "") -> NewspaperProfile:
    """Place a newspaper where most of its visitors are.

    ``visits`` maps ``(city, state, dma_code)`` to a visitor count. Ties
    between buckets go to the one whose state has more visitors overall,
    then to the lexicographically smallest bucket.
    """
    if not visits:
        raise ValueError("visits histogram is empty")
    buckets: dict[tuple, int] = defaultdict(int)
    for (city, state, dma), count in visits.items():
        if count < 0:
            raise ValueError("visit counts must be non-negative")
        buckets[(normalize_place(city), normalize_place(state), dma)] += count
    state_totals: dict[str, int] = defaultdict(int)
    for (_, state, _), count in buckets.items():
        state_totals[state] += count

    def rank(item):
        (city, state, dma), count = item
        return (-count, -state_totals[state], city, state, -1 if dma is None else dma)

    (city, state, dma), _ = min(buckets.items(), key=rank)
    return NewspaperProfile(publisher_id, city or None, state or None, "united states", dma)


def load_visits(path: str | Path) -> dict[str, dict[tuple, int]]:
    """Read ``publisher_id, city, state, dma_code, count`` rows grouped by publisher."""
    out: dict[str, dict[tuple, int]] = defaultdict(dict)
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            dma = (row.get("dma_code") or "").strip()
            key = (row["city"], row["state"], int(dma) if dma else None)
            hist = out[row["publisher_id"]]
            hist[key] = hist.get(key, 0) + int(row["count"])
    return dict(out)


@dataclass(frozen=True)
class UserGeo:
    country: str
    dma_code: int | None = None
    geo_affinity: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "country", normalize_place(self.country))
        object.__setattr__(self, "geo_affinity", normalize_place(self.geo_affinity) or None)
        if self.dma_code is not None and self.country != "united states":
            raise ValueError("only US users carry a DMA code")


@dataclass(frozen=True)
class FeatureVectorFragment:
    is_local_item: bool
    is_in_market_user: bool


def is_in_market(user: UserGeo, profile: NewspaperProfile) -> bool:
    """DMA equality when the user has a DMA code, otherwise geographic affinity on city or state."""
    if user.dma_code is not None:
        return profile.dma_code is not None and user.dma_code == profile.dma_code
    if not user.geo_affinity:
        return False
    return user.geo_affinity in {profile.city, profile.state} - {None}


class MissingDecision(LookupError):
    """No locality decision is available yet; look it up through the pipeline read path."""


def emit_features(article: Article, profile: NewspaperProfile, user: UserGeo,
                  lookup: Callable[[str], LocalityDecision | None]) -> FeatureVectorFragment:
    decision = lookup(article.id)
    if decision is None:
        raise MissingDecision(f"no locality decision for article {article.id!r}")
    return FeatureVectorFragment(decision.is_local, is_in_market(user, profile))
