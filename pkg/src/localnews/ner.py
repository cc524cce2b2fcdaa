"""Named-entity extraction.

Two interchangeable taggers share the ``extract_entities(article)`` call:
:class:`LexiconNER`, a deterministic dictionary matcher built from a
gazetteer plus person/organization rosters, and :class:`RemoteNER`, a
batch client for an HTTP tagging service.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import httpx

from .model import Article, Label, LocalityDecision, MatchedOn, NewspaperProfile, normalize_place

logger = logging.getLogger(__name__)


class EntityTag(str, enum.Enum):
    PERSON = "PERSON"
    LOCATION = "LOCATION"
    ORGANIZATION = "ORGANIZATION"
    MISC = "MISC"

    @classmethod
    def parse(cls, raw: str) -> "EntityTag":
        key = raw.strip().upper()
        aliases = {"PER": "PERSON", "LOC": "LOCATION", "ORG": "ORGANIZATION",
                   "MISCELLANEOUS": "MISC"}
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class EntityMention:
    surface: str
    tag: EntityTag
    span: tuple[int, int]

    @property
    def start(self) -> int:
        return self.span[0]

    @property
    def end(self) -> int:
        return self.span[1]

    def check(self, text: str) -> None:
        start, end = self.span
        if not (0 <= start < end <= len(text)) or text[start:end] != self.surface:
            raise ValueError(f"mention {self.surface!r} does not sit at {self.span}")

    def __str__(self) -> str:
        label = {EntityTag.MISC: "Miscellaneous"}.get(self.tag, self.tag.value.title())
        return f"{label}-{self.surface}"


class NERError(Exception):
    """Tagger failure. Distinct from an empty result; the caller may retry."""

    retryable = True


class EntityExtractor(Protocol):
    def extract_entities(self, article: Article) -> list[EntityMention]: ...


class LexiconNER:
    """Case-insensitive longest-match tagger over fixed word lists.

    Every lexicon entry is located at word boundaries; overlapping hits are
    resolved longest first, then leftmost, and the survivors are returned in
    text order. A term listed under several tags keeps the first tag seen,
    with rosters taking precedence over gazetteer places.
    """

    def __init__(self, locations: Iterable[str] = (), roster: Mapping[str, EntityTag | str] | None = None):
        self._terms: dict[str, EntityTag] = {}
        for surface, tag in (roster or {}).items():
            self._terms.setdefault(surface.casefold(), EntityTag.parse(tag) if isinstance(tag, str) else tag)
        for name in locations:
            self._terms.setdefault(name.casefold(), EntityTag.LOCATION)
        self._patterns = [
            (re.compile(rf"(?<!\w){re.escape(term)}(?!\w)", re.IGNORECASE), tag)
            for term, tag in self._terms.items() if term.strip()
        ]

    @classmethod
    def from_files(cls, gazetteer, roster_path: str | Path | None = None) -> "LexiconNER":
        roster = {}
        if roster_path:
            with open(roster_path, encoding="utf-8") as fh:
                roster = json.load(fh)
        return cls(gazetteer.location_names() if gazetteer is not None else (), roster)

    def tag_text(self, text: str) -> list[EntityMention]:
        hits = []
        for pattern, tag in self._patterns:
            for m in pattern.finditer(text):
                hits.append((m.start(), m.end(), tag))
        hits.sort(key=lambda h: (-(h[1] - h[0]), h[0]))
        taken: list[tuple[int, int, EntityTag]] = []
        for start, end, tag in hits:
            if all(end <= s or start >= e for s, e, _ in taken):
                taken.append((start, end, tag))
        taken.sort()
        return [EntityMention(text[s:e], tag, (s, e)) for s, e, tag in taken]

    def extract_entities(self, article: Article) -> list[EntityMention]:
        return self.tag_text(article.text)


class RemoteNER:
    """Client for a batch tagging endpoint.

    Request body: ``[{"id": ..., "text": ...}, ...]``. Response body:
    ``[{"id": ..., "mentions": [{"surface", "tag", "start", "end"}]}]`` in
    any order; results are matched back to requests by id.
    """

    def __init__(self, url: str, timeout: float = 10.0, client: httpx.Client | None = None):
        self.url = url
        self.timeout = timeout
        self._client = client or httpx.Client(timeout=timeout)

    def tag_batch(self, items: Sequence[tuple[str, str]]) -> dict[str, list[EntityMention]]:
        if not items:
            return {}
        payload = [{"id": item_id, "text": text} for item_id, text in items]
        try:
            resp = self._client.post(self.url, json=payload, timeout=self.timeout)
            resp.raise_for_status()
            body = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise NERError(f"NER endpoint {self.url} failed: {exc}") from exc

        texts = dict(items)
        out: dict[str, list[EntityMention]] = {}
        try:
            for record in body:
                item_id = str(record["id"])
                if item_id not in texts:
                    raise NERError(f"NER endpoint returned unknown id {item_id!r}")
                mentions = [
                    EntityMention(m["surface"], EntityTag.parse(m["tag"]), (int(m["start"]), int(m["end"])))
                    for m in record.get("mentions", ())
                ]
                for mention in mentions:
                    mention.check(texts[item_id])
                out[item_id] = sorted(mentions, key=lambda m: m.span)
        except (KeyError, TypeError, ValueError) as exc:
            raise NERError(f"malformed NER response: {exc}") from exc
        missing = set(texts) - set(out)
        if missing:
            raise NERError(f"NER response missing ids {sorted(missing)}")
        return out

    def extract_entities(self, article: Article) -> list[EntityMention]:
        return self.tag_batch([(article.id, article.text)])[article.id]

    def close(self) -> None:
        self._client.close()


def ner_local_label(article_id: str, mentions: Iterable[EntityMention],
                    profile: NewspaperProfile) -> LocalityDecision:
    """Explicit-location rule: LOCAL iff a LOCATION mention names the newspaper's city or state."""
    city_hits, state_hits = [], []
    for m in mentions:
        if m.tag is not EntityTag.LOCATION:
            continue
        name = normalize_place(m.surface)
        if profile.city and name == profile.city:
            city_hits.append(m.surface)
        elif profile.state and name == profile.state:
            state_hits.append(m.surface)
    if city_hits:
        return LocalityDecision(article_id, Label.LOCAL, MatchedOn.CITY, city_hits + state_hits)
    if state_hits:
        return LocalityDecision(article_id, Label.LOCAL, MatchedOn.STATE, state_hits)
    return LocalityDecision(article_id, Label.NATIONAL, MatchedOn.NONE)


class MockNER:
    """Replays recorded mentions: a JSON map ``article_id -> [{surface, tag, start, end}]``.

    Articles absent from the map yield no mentions.
    """

    def __init__(self, mentions: Mapping[str, Sequence[Mapping]]):
        self._mentions = {
            aid: [EntityMention(m["surface"], EntityTag.parse(m["tag"]), (int(m["start"]), int(m["end"])))
                  for m in ms]
            for aid, ms in mentions.items()
        }

    @classmethod
    def from_json(cls, path: str | Path) -> "MockNER":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def extract_entities(self, article: Article) -> list[EntityMention]:
        mentions = sorted(self._mentions.get(article.id, ()), key=lambda m: m.span)
        for m in mentions:
            m.check(article.text)
        return mentions
