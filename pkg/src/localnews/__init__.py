"""Local-news article classification with NER, knowledge-graph hints and LLM prompts."""

from .model import (
    AnswerSource,
    Article,
    Label,
    LocalityDecision,
    LocationAnswer,
    MatchedOn,
    NewspaperProfile,
    ground_truth_label,
    normalize_place,
)

__version__ = "0.1.0"

__all__ = [
    "AnswerSource",
    "Article",
    "Label",
    "LocalityDecision",
    "LocationAnswer",
    "MatchedOn",
    "NewspaperProfile",
    "ground_truth_label",
    "normalize_place",
]
