"""Knowledge-graph access: fixture store, Wikidata client, linking and P131 walks."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import httpx

from .model import Diagnostics, MatchedOn, NewspaperProfile, normalize_place
from .ner import EntityMention, EntityTag

logger = logging.getLogger(__name__)

LOCATED_IN = "P131"
INSTANCE_OF = "P31"
SPORTS_TEAM = "P54"
POPULATION = "P1082"
PLACE_OF_BIRTH = "P19"
RESIDENCE = "P551"
KNOWN_PROPERTIES = (LOCATED_IN, INSTANCE_OF, SPORTS_TEAM, POPULATION, PLACE_OF_BIRTH, RESIDENCE)

HUMAN = "Q5"
COUNTY_CLASSES = frozenset({"Q47168", "Q28575"})

# instance-of class -> (triplet head, triplet relation)
LEVELS = {
    "Q515": ("City", "cityLabel"),
    "Q1093829": ("City", "cityLabel"),
    "Q47168": ("County", "countyLabel"),
    "Q28575": ("County", "countyLabel"),
    "Q35657": ("State", "stateLabel"),
    "Q107390": ("State", "stateLabel"),
    "Q6256": ("Country", "additionalRegionLabel"),
    "Q3624078": ("Country", "additionalRegionLabel"),
}


class KGError(Exception):
    """Knowledge graph unreachable or returned garbage; retryable."""

    retryable = True


@dataclass(frozen=True)
class KGEntity:
    entity_id: str
    label: str
    description: str | None = None
    claims: Mapping[str, tuple] = field(default_factory=dict)
    relation_count: int = 0
    aliases: tuple[str, ...] = ()

    def __post_init__(self):
        claims = {pid: tuple(v if isinstance(v, (list, tuple)) else [v]) for pid, v in self.claims.items()}
        object.__setattr__(self, "claims", claims)
        object.__setattr__(self, "aliases", tuple(self.aliases))
        if any(int(p) < 0 for p in claims.get(POPULATION, ())):
            raise ValueError(f"{self.entity_id}: negative population")
        stored = sum(len(v) for v in claims.values())
        if self.relation_count < stored:
            # fixtures may omit the count; it can never be below what is stored
            object.__setattr__(self, "relation_count", stored)

    def values(self, pid: str) -> tuple:
        return self.claims.get(pid, ())

    @property
    def population(self) -> int | None:
        pops = self.values(POPULATION)
        return max(int(p) for p in pops) if pops else None

    @property
    def is_human(self) -> bool:
        return HUMAN in self.values(INSTANCE_OF)

    @property
    def level(self) -> tuple[str, str] | None:
        for cls in self.values(INSTANCE_OF):
            if cls in LEVELS:
                return LEVELS[cls]
        return None

    @property
    def is_county(self) -> bool:
        return bool(COUNTY_CLASSES & set(self.values(INSTANCE_OF))) or \
            normalize_place(self.label).endswith(" county")

    def names(self) -> set[str]:
        """Normalized label and aliases; counties also answer to their bare name."""
        names = {normalize_place(n) for n in (self.label, *self.aliases)}
        if self.is_county:
            names |= {n.removesuffix(" county") for n in names}
        names.discard("")
        return names

    def to_dict(self) -> dict:
        claims = {pid: list(v) for pid, v in self.claims.items()}
        if POPULATION in claims and len(claims[POPULATION]) == 1:
            claims[POPULATION] = claims[POPULATION][0]
        return {"label": self.label, "description": self.description, "claims": claims,
                "relation_count": self.relation_count, "aliases": list(self.aliases)}

    @classmethod
    def from_dict(cls, entity_id: str, data: Mapping) -> "KGEntity":
        return cls(entity_id, data["label"], data.get("description"), data.get("claims", {}),
                   int(data.get("relation_count", 0)), tuple(data.get("aliases", ())))


@dataclass(frozen=True)
class KGTriplet:
    head: str
    relation: str
    tail: str

    def __post_init__(self):
        if not (self.head and self.relation and self.tail):
            raise ValueError(f"triplet fields must be non-empty: {self!r}")

    def __str__(self) -> str:
        return "(" + ", ".join(_quote(x) for x in (self.head, self.relation, self.tail)) + ")"


def _quote(text: str) -> str:
    return "'" + text.replace("\\", "\\\\").replace("'", "\\'") + "'"


def format_triplets(triplets: Sequence[KGTriplet]) -> str:
    """Bracketed tuple list: ``[('a', 'b', 'c'), ('d', 'e', 'f')]``."""
    return "[" + ", ".join(str(t) for t in triplets) + "]"


class KnowledgeGraph(Protocol):
    def get(self, entity_id: str) -> KGEntity | None: ...

    def search(self, surface: str) -> list[KGEntity]: ...


class FixtureKG:
    """Immutable graph loaded from a JSON map ``entity_id -> record``."""

    def __init__(self, entities: Iterable[KGEntity]):
        self._entities = {e.entity_id: e for e in entities}
        self._by_name: dict[str, list[KGEntity]] = {}
        for entity in self._entities.values():
            for name in {normalize_place(n) for n in (entity.label, *entity.aliases)}:
                self._by_name.setdefault(name, []).append(entity)

    @classmethod
    def from_json(cls, path: str | Path) -> "FixtureKG":
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(json.load(fh))

    @classmethod
    def from_mapping(cls, data: Mapping[str, Mapping]) -> "FixtureKG":
        return cls(KGEntity.from_dict(eid, rec) for eid, rec in data.items())

    def to_mapping(self) -> dict:
        return {eid: e.to_dict() for eid, e in self._entities.items()}

    def get(self, entity_id: str) -> KGEntity | None:
        return self._entities.get(entity_id)

    def search(self, surface: str) -> list[KGEntity]:
        return list(self._by_name.get(normalize_place(surface), ()))

    def __len__(self):
        return len(self._entities)


class WikidataClient:
    """Live Wikidata reader with an on-disk entity cache.

    ``mode`` selects the transport: ``"live"`` hits the API, ``"record"``
    hits it and saves every response under ``cassette_dir``, ``"replay"``
    serves only from ``cassette_dir`` and never touches the network.
    """

    API = "https://www.wikidata.org/w/api.php"

    def __init__(self, api_url: str = API, *, timeout: float = 10.0, min_interval: float = 0.2,
                 cache_dir: str | Path | None = None, mode: str = "live",
                 cassette_dir: str | Path | None = None, language: str = "en",
                 search_limit: int = 10, client: httpx.Client | None = None):
        if mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode != "live" and cassette_dir is None:
            raise ValueError(f"mode {mode!r} needs a cassette_dir")
        self.api_url = api_url
        self.timeout = timeout
        self.min_interval = min_interval
        self.mode = mode
        self.language = language
        self.search_limit = search_limit
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.cassette_dir = Path(cassette_dir) if cassette_dir else None
        self._client = client
        self._lock = threading.Lock()
        self._last_call = 0.0
        self._memo: dict[str, KGEntity | None] = {}
        for d in (self.cache_dir, self.cassette_dir if mode == "record" else None):
            if d:
                d.mkdir(parents=True, exist_ok=True)

    def _request(self, params: dict) -> dict:
        params = {**params, "format": "json"}
        key = hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()[:32]
        if self.mode == "replay":
            path = self.cassette_dir / f"{key}.json"
            if not path.exists():
                raise KGError(f"no recorded response for {params}")
            return json.loads(path.read_text(encoding="utf-8"))

        with self._lock:
            wait = self._last_call + self.min_interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last_call = time.monotonic()
        if self._client is None:
            self._client = httpx.Client(timeout=self.timeout,
                                        headers={"User-Agent": "localnews/0.1 (research)"})
        try:
            resp = self._client.get(self.api_url, params=params, timeout=self.timeout)
            resp.raise_for_status()
            body = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise KGError(f"wikidata request failed: {exc}") from exc
        if "error" in body:
            raise KGError(f"wikidata error: {body['error']}")
        if self.mode == "record":
            _atomic_write(self.cassette_dir / f"{key}.json", json.dumps(body, sort_keys=True))
        return body

    def _fetch_documents(self, ids: Sequence[str]) -> dict[str, dict]:
        docs: dict[str, dict] = {}
        todo = []
        for eid in ids:
            cached = self.cache_dir / f"{eid}.json" if self.cache_dir else None
            if cached and cached.exists():
                docs[eid] = json.loads(cached.read_text(encoding="utf-8"))
            else:
                todo.append(eid)
        for i in range(0, len(todo), 50):
            chunk = todo[i:i + 50]
            body = self._request({"action": "wbgetentities", "ids": "|".join(chunk),
                                  "props": "labels|descriptions|aliases|claims",
                                  "languages": self.language})
            for eid, doc in body.get("entities", {}).items():
                if "missing" in doc:
                    continue
                docs[eid] = doc
                if self.cache_dir:
                    _atomic_write(self.cache_dir / f"{eid}.json", json.dumps(doc, sort_keys=True))
        return docs

    def get(self, entity_id: str) -> KGEntity | None:
        if entity_id not in self._memo:
            doc = self._fetch_documents([entity_id]).get(entity_id)
            self._memo[entity_id] = parse_entity_document(doc, self.language) if doc else None
        return self._memo[entity_id]

    def search(self, surface: str) -> list[KGEntity]:
        body = self._request({"action": "wbsearchentities", "search": surface,
                              "language": self.language, "type": "item",
                              "limit": self.search_limit})
        ids = [hit["id"] for hit in body.get("search", ())]
        docs = self._fetch_documents(ids)
        wanted = normalize_place(surface)
        out = []
        for eid in ids:
            if eid not in docs:
                continue
            entity = parse_entity_document(docs[eid], self.language)
            self._memo[eid] = entity
            if wanted in {normalize_place(n) for n in (entity.label, *entity.aliases)}:
                out.append(entity)
        return out


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(f".{os.getpid()}.{threading.get_ident()}.tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def parse_entity_document(doc: Mapping, language: str = "en") -> KGEntity:
    """Convert a ``wbgetentities`` entity document into a :class:`KGEntity`."""
    label = doc.get("labels", {}).get(language, {}).get("value") or doc["id"]
    description = doc.get("descriptions", {}).get(language, {}).get("value")
    aliases = tuple(a["value"] for a in doc.get("aliases", {}).get(language, ()))
    claims: dict[str, list] = {}
    total = 0
    for pid, statements in doc.get("claims", {}).items():
        total += len(statements)
        if pid not in KNOWN_PROPERTIES:
            continue
        values = []
        for st in statements:
            if st.get("rank") == "deprecated":
                continue
            snak = st.get("mainsnak", {})
            value = snak.get("datavalue", {}).get("value")
            if value is None:
                continue
            if isinstance(value, dict) and "id" in value:
                values.append(value["id"])
            elif isinstance(value, dict) and "amount" in value:
                values.append(int(float(value["amount"])))
        if values:
            claims[pid] = values
    return KGEntity(doc["id"], label, description, claims, total, aliases)


def lookup_candidates(kg: KnowledgeGraph, surface: str, tag: EntityTag) -> list[KGEntity]:
    """Entities whose label (or alias) matches ``surface``; PERSON mentions keep humans only."""
    if not surface or not surface.strip():
        raise ValueError("surface must be non-empty")
    found = kg.search(surface)
    if tag is EntityTag.PERSON:
        found = [e for e in found if e.is_human]
    return sorted(found, key=lambda e: e.entity_id)


def link_entity(candidates: Sequence[KGEntity]) -> KGEntity:
    """Pick the most likely referent: largest population if any is known, else most relations."""
    if not candidates:
        raise ValueError("link_entity needs at least one candidate")
    populated = [c for c in candidates if c.population is not None]
    if populated:
        return min(populated, key=lambda c: (-c.population, c.entity_id))
    return min(candidates, key=lambda c: (-c.relation_count, c.entity_id))


@dataclass(frozen=True)
class P131Match:
    matched_on: MatchedOn
    hops: int
    path: tuple[str, ...]


def traverse_p131(kg: KnowledgeGraph, entity: KGEntity, target_city: str | None,
                  target_state: str | None, max_hops: int = 4,
                  diagnostics: Diagnostics | None = None) -> P131Match | None:
    """Walk located-in links from ``entity`` looking for the target city or state.

    The start entity is hop 0 and each followed edge adds one, so at most
    ``max_hops + 1`` entities are examined. Where an entity lists several
    parents the first is followed and the rest are noted in ``diagnostics``.
    """
    if max_hops < 1:
        raise ValueError("max_hops must be >= 1")
    city = normalize_place(target_city) if target_city else None
    state = normalize_place(target_state) if target_state else None
    seen = set()
    path: list[str] = []
    current: KGEntity | None = entity
    for hop in range(max_hops + 1):
        if current is None:
            return None
        if current.entity_id in seen:
            _note(diagnostics, f"P131 cycle at {current.entity_id} after {' -> '.join(path)}")
            return None
        seen.add(current.entity_id)
        path.append(current.label)
        names = current.names()
        if city and city in names:
            return P131Match(MatchedOn.CITY, hop, tuple(path))
        if state and state in names:
            return P131Match(MatchedOn.STATE, hop, tuple(path))
        parents = current.values(LOCATED_IN)
        if not parents or hop == max_hops:
            return None
        if len(parents) > 1:
            _note(diagnostics, f"{current.entity_id} has alternate P131 values {list(parents[1:])}")
        current = kg.get(parents[0])
    return None


def _note(diagnostics: Diagnostics | None, message: str) -> None:
    if diagnostics is None:
        logger.debug(message)
    else:
        diagnostics.add(message)


@dataclass(frozen=True)
class PersonEvidence:
    description: str | None
    teams: tuple[KGEntity, ...]


def person_evidence(kg: KnowledgeGraph, entity: KGEntity) -> PersonEvidence:
    """Description and sports teams of a human entity.

    Birthplace and residence are deliberately not consulted.
    """
    if not entity.is_human:
        raise ValueError(f"{entity.entity_id} ({entity.label}) is not an instance of human")
    teams = tuple(t for t in (kg.get(tid) for tid in entity.values(SPORTS_TEAM)) if t is not None)
    return PersonEvidence(entity.description or None, teams)


def ancestry(kg: KnowledgeGraph, entity: KGEntity, max_hops: int = 4) -> list[KGEntity]:
    """The entity followed by its first-parent P131 chain, cycle-safe."""
    chain, seen = [], set()
    current: KGEntity | None = entity
    while current is not None and current.entity_id not in seen and len(chain) <= max_hops:
        chain.append(current)
        seen.add(current.entity_id)
        parents = current.values(LOCATED_IN)
        current = kg.get(parents[0]) if parents else None
    return chain


def triplets_for_prompt(kg: KnowledgeGraph, mentions: Iterable[EntityMention],
                        profile: NewspaperProfile | None = None, max_hops: int = 4) -> list[KGTriplet]:
    """Human-readable KG facts for the prompt, in mention order, without repeats.

    People contribute their description and teams. Places and organizations
    contribute one triplet per administrative level (city, county, state,
    country) on their located-in chain. The newspaper profile is not used to
    steer linking; it is accepted so callers can pass a uniform context.
    """
    out: list[KGTriplet] = []
    seen: set[KGTriplet] = set()

    def emit(t: KGTriplet) -> None:
        if t not in seen:
            seen.add(t)
            out.append(t)

    for mention in mentions:
        if mention.tag is EntityTag.MISC or not mention.surface.strip():
            continue
        candidates = lookup_candidates(kg, mention.surface, mention.tag)
        if not candidates:
            continue
        entity = link_entity(candidates)
        if mention.tag is EntityTag.PERSON:
            evidence = person_evidence(kg, entity)
            if evidence.description:
                emit(KGTriplet(entity.label, "personDescription", evidence.description))
            for team in evidence.teams:
                emit(KGTriplet(entity.label, "member of", team.label))
            continue
        for node in ancestry(kg, entity, max_hops):
            level = node.level
            if level:
                emit(KGTriplet(level[0], level[1], node.label))
    return out
