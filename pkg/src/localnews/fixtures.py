"""A small self-contained world (places, graph, rosters, newspapers, articles) for demos and tests.

The scripted LLM replies reproduce the case studies that motivate the
design: the Artiles article that only resolves with graph hints, the
Henderson article that enrichment breaks, and the Charlotte/Sarasota
article that enrichment fixes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .classify import LocalNewsClassifier
from .gazetteer import Gazetteer, load_dma_table
from .kg import FixtureKG
from .llm import MockLLM
from .model import Article, NewspaperProfile, load_corpus, load_profiles
from .ner import LexiconNER

DATA_DIR = Path(str(resources.files("localnews").joinpath("data")))


def answer_body(city: str, state: str, country: str = "united states", title: str | None = None) -> str:
    obj = {"item_city": city, "item_state": state, "item_country": country}
    if title is not None:
        obj = {"title": title, **obj}
    return json.dumps(obj, indent=2)


ARTILES_REPLY = """{
  "title": "Republican operative admits paying Artiles for opo research on trial's first day",
  "item_city": "miami",
  "item_state": "florida",
  "item_country": "united states"
}"""

EXAMPLE_1_REPLY = """{"title": "Dolphin's Grant DuBose stretchered off, remains hospitalized",
     "item_city": "miami",
     "item_state": "florida",
     "item_country": "united states",
    }"""

EXAMPLE_2_REPLY = """{"title": "Governor Ron DeSantis Announces the Focus on Fiscal Responsibility 2025-2026 Budget",
     "item_city": "miami",
     "item_state": "florida",
     "item_country": "united States",
    }"""

NULL_REPLY = '{"item_city": "null", "item_state": "null", "item_country": "null"}'

# article_id -> replies for the plain prompt
STANDALONE_REPLIES = {
    "artiles": [NULL_REPLY],
    "dolphins-jets": [answer_body("miami", "florida")],
    "thompson": [answer_body("miami", "florida"), answer_body("miami", "florida"),
                 answer_body("tampa", "florida")],
    "dubose": [EXAMPLE_1_REPLY],
    "desantis": [EXAMPLE_2_REPLY],
    "coconut-grove": ["Sure! Here is the answer:\n" + answer_body("miami", "florida")],
    "henderson": [answer_body("henderson", "north carolina")],
    "charlotte-sarasota": [answer_body("charlotte", "north carolina")],
    "wvsu": [answer_body("institute", "west virginia")],
    "swift": [NULL_REPLY],
    "houston-budget": [answer_body("houston", "texas")],
    "markets": [NULL_REPLY],
    "conflicted": [answer_body("raleigh", "north carolina")],
}

# article_id -> replies for the graph-enriched prompt (scripted by that prompt's key)
ENRICHED_REPLIES = {
    "artiles": [ARTILES_REPLY],
    "henderson": [answer_body("henderson", "nevada")],
    "charlotte-sarasota": [answer_body("charlotte", "florida")],
}


@dataclass
class DemoWorld:
    gazetteer: Gazetteer
    kg: FixtureKG
    ner: LexiconNER
    profiles: dict[str, NewspaperProfile]
    corpus: list[Article]
    dma: dict[tuple[str, str], int]

    def article(self, article_id: str) -> Article:
        return next(a for a in self.corpus if a.id == article_id)

    def classifier(self, endpoint=None, **kwargs) -> LocalNewsClassifier:
        return LocalNewsClassifier(self.ner, self.kg, self.gazetteer, endpoint, **kwargs)

    def mock_scripts(self) -> dict[str, list[str]]:
        """Reply scripts keyed by article id (plain prompts) and prompt key (enriched prompts)."""
        scripts: dict[str, list[str]] = {k: list(v) for k, v in STANDALONE_REPLIES.items()}
        clf = self.classifier()
        for article_id, replies in ENRICHED_REPLIES.items():
            request = clf.prompt_for(self.article(article_id), enrich=True)
            scripts[request.prompt_key] = list(replies)
        return scripts

    def mock_llm(self, **kwargs) -> MockLLM:
        return MockLLM(self.mock_scripts(), **kwargs)


def load_demo_world(data_dir: str | Path = DATA_DIR) -> DemoWorld:
    data_dir = Path(data_dir)
    gazetteer = Gazetteer.from_csv(data_dir / "gazetteer.csv")
    return DemoWorld(
        gazetteer=gazetteer,
        kg=FixtureKG.from_json(data_dir / "kg.json"),
        ner=LexiconNER.from_files(gazetteer, data_dir / "roster.json"),
        profiles=load_profiles(data_dir / "profiles.json"),
        corpus=load_corpus(data_dir / "corpus.jsonl"),
        dma=load_dma_table(data_dir / "dma.csv"),
    )


def write_demo_mock(path: str | Path, world: DemoWorld | None = None) -> None:
    world = world or load_demo_world()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(world.mock_scripts(), fh, indent=2, sort_keys=True)
        fh.write("\n")
