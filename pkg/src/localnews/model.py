"""Shared domain types, place-name normalization and corpus file readers."""

from __future__ import annotations

import enum
import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Iterator

logger = logging.getLogger(__name__)


class Label(str, enum.Enum):
    LOCAL = "LOCAL"
    NATIONAL = "NATIONAL"


class MatchedOn(str, enum.Enum):
    CITY = "CITY"
    STATE = "STATE"
    NONE = "NONE"


class AnswerSource(str, enum.Enum):
    NER = "NER"
    NER_KG = "NER_KG"
    LLM = "LLM"
    LLM_KG = "LLM_KG"


US_STATE_ABBREVIATIONS = {
    "al": "alabama", "ak": "alaska", "az": "arizona", "ar": "arkansas",
    "ca": "california", "co": "colorado", "ct": "connecticut", "de": "delaware",
    "dc": "district of columbia", "fl": "florida", "ga": "georgia", "hi": "hawaii",
    "id": "idaho", "il": "illinois", "in": "indiana", "ia": "iowa",
    "ks": "kansas", "ky": "kentucky", "la": "louisiana", "me": "maine",
    "md": "maryland", "ma": "massachusetts", "mi": "michigan", "mn": "minnesota",
    "ms": "mississippi", "mo": "missouri", "mt": "montana", "ne": "nebraska",
    "nv": "nevada", "nh": "new hampshire", "nj": "new jersey", "nm": "new mexico",
    "ny": "new york", "nc": "north carolina", "nd": "north dakota", "oh": "ohio",
    "ok": "oklahoma", "or": "oregon", "pa": "pennsylvania", "ri": "rhode island",
    "sc": "south carolina", "sd": "south dakota", "tn": "tennessee", "tx": "texas",
    "ut": "utah", "vt": "vermont", "va": "virginia", "wa": "washington",
    "wv": "west virginia", "wi": "wisconsin", "wy": "wyoming",
}

PLACE_ABBREVIATIONS = {**US_STATE_ABBREVIATIONS, "us": "united states", "usa": "united states"}

# hyphens and slashes separate words ("Winston-Salem"); other punctuation is dropped
_SEPARATORS = re.compile(r"[-/‐-―_]+")
_PUNCT = re.compile(r"[^\w\s]+")
_NULL_TOKENS = frozenset({"", "null", "none", "n/a", "unknown"})


def normalize_place(raw: str | None) -> str:
    """Canonical comparison form of a place name.

    >>> normalize_place(" Miami ")
    'miami'
    >>> normalize_place("FL")
    'florida'
    """
    if not raw:
        return ""
    text = unicodedata.normalize("NFC", str(raw)).casefold()
    text = _SEPARATORS.sub(" ", text)
    text = _PUNCT.sub("", unicodedata.normalize("NFC", text))
    text = " ".join(text.split())
    return PLACE_ABBREVIATIONS.get(text, text)


def clean_place(raw: object) -> str | None:
    """normalize_place for optional fields: null-ish values become None."""
    if raw is None:
        return None
    if isinstance(raw, (list, tuple)):
        raw = raw[0] if raw else None
        if raw is None:
            return None
    if str(raw).strip().casefold() in _NULL_TOKENS:
        return None
    value = normalize_place(str(raw))
    return None if value in _NULL_TOKENS else value


@dataclass(frozen=True)
class Article:
    id: str
    title: str
    description: str = ""
    publisher_id: str = ""
    editorial_tags: tuple[str, ...] = ()
    crawl_time: datetime | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("article id must be non-empty")
        if not self.title or not self.title.strip():
            raise ValueError(f"article {self.id!r} has an empty title")
        object.__setattr__(self, "editorial_tags", tuple(self.editorial_tags))

    @property
    def text(self) -> str:
        """Title and description joined by a newline; NER spans index into this."""
        return f"{self.title}\n{self.description}" if self.description else self.title

    @classmethod
    def from_dict(cls, data: dict) -> "Article":
        crawl = data.get("crawl_time")
        return cls(
            id=str(data.get("id") or ""),
            title=data.get("title") or "",
            description=data.get("description") or "",
            publisher_id=str(data.get("publisher_id") or ""),
            editorial_tags=tuple(data.get("editorial_tags") or ()),
            crawl_time=datetime.fromisoformat(crawl) if crawl else None,
        )

    def to_dict(self) -> dict:
        data = {
            "id": self.id,
            "title": self.title,
            "description": self.description,
            "publisher_id": self.publisher_id,
            "editorial_tags": list(self.editorial_tags),
        }
        if self.crawl_time is not None:
            data["crawl_time"] = self.crawl_time.isoformat()
        return data


@dataclass(frozen=True)
class NewspaperProfile:
    publisher_id: str
    city: str | None = None
    state: str | None = None
    country: str | None = "united states"
    dma_code: int | None = None

    def __post_init__(self):
        for name in ("city", "state", "country"):
            object.__setattr__(self, name, clean_place(getattr(self, name)))
        if not (self.city or self.state):
            raise ValueError(f"profile {self.publisher_id!r} needs a city or a state")

    @classmethod
    def from_dict(cls, data: dict) -> "NewspaperProfile":
        dma = data.get("dma_code")
        return cls(
            publisher_id=str(data["publisher_id"]),
            city=data.get("city"),
            state=data.get("state"),
            country=data.get("country", "united states"),
            dma_code=int(dma) if dma not in (None, "") else None,
        )

    def to_dict(self) -> dict:
        return {
            "publisher_id": self.publisher_id,
            "city": self.city,
            "state": self.state,
            "country": self.country,
            "dma_code": self.dma_code,
        }


@dataclass(frozen=True)
class LocationAnswer:
    city: str | None = None
    state: str | None = None
    country: str | None = None
    source: AnswerSource = AnswerSource.LLM

    def __post_init__(self):
        for name in ("city", "state", "country"):
            object.__setattr__(self, name, clean_place(getattr(self, name)))
        object.__setattr__(self, "source", AnswerSource(self.source))

    @property
    def is_empty(self) -> bool:
        return not (self.city or self.state or self.country)

    def filled(self) -> int:
        return sum(1 for v in (self.city, self.state, self.country) if v)

    def to_dict(self) -> dict:
        return {"city": self.city, "state": self.state, "country": self.country,
                "source": self.source.value}

    @classmethod
    def from_dict(cls, data: dict) -> "LocationAnswer":
        return cls(data.get("city"), data.get("state"), data.get("country"),
                   AnswerSource(data.get("source", "LLM")))


@dataclass(frozen=True)
class LocalityDecision:
    article_id: str
    label: Label
    matched_on: MatchedOn = MatchedOn.NONE
    evidence: tuple[str, ...] = ()
    diagnostics: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "label", Label(self.label))
        object.__setattr__(self, "matched_on", MatchedOn(self.matched_on))
        object.__setattr__(self, "evidence", tuple(self.evidence))
        object.__setattr__(self, "diagnostics", tuple(self.diagnostics))
        if self.label is Label.LOCAL and self.matched_on is MatchedOn.NONE:
            raise ValueError("a LOCAL decision must record what it matched on")

    @property
    def is_local(self) -> bool:
        return self.label is Label.LOCAL

    def to_dict(self) -> dict:
        return {
            "article_id": self.article_id,
            "label": self.label.value,
            "matched_on": self.matched_on.value,
            "evidence": list(self.evidence),
            "diagnostics": list(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LocalityDecision":
        return cls(data["article_id"], Label(data["label"]), MatchedOn(data["matched_on"]),
                   tuple(data.get("evidence", ())), tuple(data.get("diagnostics", ())))


def national(article_id: str, *diagnostics: str) -> LocalityDecision:
    return LocalityDecision(article_id, Label.NATIONAL, MatchedOn.NONE, (), diagnostics)


def ground_truth_label(article: Article, inconsistent: list[str] | None = None) -> Label | None:
    """Editorial locality tag, or None for untagged and conflicting articles.

    Articles tagged both local and national are excluded; their ids are
    appended to ``inconsistent`` when a list is supplied.
    """
    tags = {t.strip().casefold() for t in article.editorial_tags}
    local, nat = "local" in tags, "national" in tags
    if local and nat:
        logger.info("article %s tagged both local and national; excluded", article.id)
        if inconsistent is not None:
            inconsistent.append(article.id)
        return None
    if local:
        return Label.LOCAL
    if nat:
        return Label.NATIONAL
    return None


def iter_corpus(path: str | Path) -> Iterator[Article]:
    """Read a JSON-lines article corpus."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield Article.from_dict(json.loads(line))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: bad article record: {exc}") from exc


def load_corpus(path: str | Path) -> list[Article]:
    return list(iter_corpus(path))


def write_corpus(articles: Iterable[Article], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for article in articles:
            fh.write(json.dumps(article.to_dict(), ensure_ascii=False) + "\n")


def load_profiles(path: str | Path) -> dict[str, NewspaperProfile]:
    with open(path, encoding="utf-8") as fh:
        records = json.load(fh)
    profiles = [NewspaperProfile.from_dict(r) for r in records]
    return {p.publisher_id: p for p in profiles}


@dataclass
class Diagnostics:
    """Append-only log of non-fatal conditions met while processing one item."""

    messages: list[str] = field(default_factory=list)

    def add(self, message: str) -> None:
        logger.debug(message)
        self.messages.append(message)

    def __iter__(self):
        return iter(self.messages)

    def __len__(self):
        return len(self.messages)
