"""Run configuration and wiring of components from it.

Configuration is a JSON object; every key is optional and unset paths fall
back to the packaged demo data. Keys:

``corpus``, ``profiles``, ``gazetteer``, ``roster``, ``kg``
    input files (JSON lines, JSON array, CSV, JSON map, JSON map).
``model``            one of ner, kg_ner, llm, kg_llm.
``enrich``           add graph triplets to LLM prompts (turns llm into kg_llm).
``runs``             LLM runs per prompt, merged by majority (default 3).
``max_retries``      retries per run on transient failures (default 2).
``batch_size``       prompts per pipeline batch (default 8).
``ttl_seconds``      age after which a PENDING key is re-forwarded (default 900).
``queue_backend``    only ``"inprocess"`` ships in this package.
``store_path``       SQLite file for the pipeline store; unset means in-memory.
``metrics_port``     serve plain-text counters on this port when set.
``llm``              ``{"url", "model", "timeout", "mock"}``; ``mock`` is a script file.
``ner``              ``{"url", "timeout", "mock"}``; unset uses the lexicon tagger.
``wikidata``         ``{"url", "cache_dir", "mode", "cassette_dir", "min_interval"}``;
                     when present the live client replaces the ``kg`` fixture.

Credentials never live in the file: the LLM key is read from the
``LOCALNEWS_LLM_API_KEY`` environment variable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .classify import MODELS, LocalNewsClassifier
from .fixtures import DATA_DIR
from .gazetteer import Gazetteer
from .kg import FixtureKG, WikidataClient
from .llm import ChatCompletionEndpoint, MockLLM
from .ner import LexiconNER, MockNER, RemoteNER


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    corpus: Path = DATA_DIR / "corpus.jsonl"
    profiles: Path = DATA_DIR / "profiles.json"
    gazetteer: Path = DATA_DIR / "gazetteer.csv"
    roster: Path | None = DATA_DIR / "roster.json"
    kg: Path | None = DATA_DIR / "kg.json"
    model: str = "kg_llm"
    enrich: bool = False
    runs: int = 3
    max_retries: int = 2
    backoff: float = 0.5
    batch_size: int = 8
    ttl_seconds: float = 900.0
    queue_backend: str = "inprocess"
    store_path: Path | None = None
    metrics_port: int | None = None
    llm: dict = field(default_factory=dict)
    ner: dict = field(default_factory=dict)
    wikidata: dict | None = None

    @classmethod
    def load(cls, path: str | Path | None = None, **overrides) -> "RunConfig":
        data = {}
        if path:
            try:
                with open(path, encoding="utf-8") as fh:
                    data = json.load(fh)
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        for key in ("corpus", "profiles", "gazetteer", "roster", "kg", "store_path"):
            if data.get(key) is not None:
                data[key] = Path(data[key])
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @property
    def effective_model(self) -> str:
        return "kg_llm" if self.model == "llm" and self.enrich else self.model

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {', '.join(MODELS)}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.ttl_seconds <= 0:
            raise ConfigError("ttl_seconds must be positive")
        if self.queue_backend != "inprocess":
            raise ConfigError(f"queue backend {self.queue_backend!r} is not available")
        for name in ("corpus", "profiles", "gazetteer", "roster", "kg"):
            path = getattr(self, name)
            if path is not None and not path.exists():
                raise ConfigError(f"{name} file not found: {path}")
        for section in (self.llm, self.ner):
            mock = section.get("mock")
            if mock and not Path(mock).exists():
                raise ConfigError(f"mock file not found: {mock}")

    def build_classifier(self) -> LocalNewsClassifier:
        gazetteer = Gazetteer.from_csv(self.gazetteer)
        if self.ner.get("mock"):
            ner = MockNER.from_json(self.ner["mock"])
        elif self.ner.get("url"):
            ner = RemoteNER(self.ner["url"], float(self.ner.get("timeout", 10.0)))
        else:
            ner = LexiconNER.from_files(gazetteer, self.roster)

        if self.wikidata is not None:
            wd = self.wikidata
            kg = WikidataClient(wd.get("url", WikidataClient.API),
                                timeout=float(wd.get("timeout", 10.0)),
                                min_interval=float(wd.get("min_interval", 0.2)),
                                cache_dir=wd.get("cache_dir"), mode=wd.get("mode", "live"),
                                cassette_dir=wd.get("cassette_dir"))
        else:
            kg = FixtureKG.from_json(self.kg) if self.kg else None

        endpoint = None
        if self.llm.get("mock"):
            endpoint = MockLLM.from_json(self.llm["mock"])
        elif self.llm.get("url"):
            endpoint = ChatCompletionEndpoint(self.llm["url"], self.llm.get("model", "gpt-3.5-turbo-0301"),
                                              timeout=float(self.llm.get("timeout", 60.0)))
        return LocalNewsClassifier(ner, kg, gazetteer, endpoint, runs=self.runs,
                                   max_retries=self.max_retries, backoff=self.backoff)
