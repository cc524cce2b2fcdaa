"""Offline and online evaluation: confusion counts, recall splits, ambiguity, t-test, lift."""

from __future__ import annotations

import enum
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from scipy import stats

from .model import Label, LocationAnswer

NA = "n/a"


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class Scores:
    """Ratios in [0, 1]; None where the denominator is zero."""

    precision: float | None
    recall: float | None
    f1: float | None

    def as_percentages(self) -> dict[str, str]:
        return {k: pct(v) for k, v in asdict(self).items()}


def pct(value: float | None, digits: int = 2) -> str:
    return NA if value is None else f"{100 * value:.{digits}f}%"


def _label(value) -> Label:
    return value if isinstance(value, Label) else Label(str(value).upper())


def confusion(predictions: Mapping[str, Label | str], ground_truth: Mapping[str, Label | str]) -> ConfusionMatrix:
    """Count outcomes with LOCAL as the positive class.

    Every prediction needs a ground-truth label; ids missing on either side
    raise ``KeyError`` listing them.
    """
    orphans = set(predictions) ^ set(ground_truth)
    if orphans:
        raise KeyError(f"ids present on only one side: {sorted(orphans)[:20]}")
    tp = fp = fn = tn = 0
    for article_id, predicted in predictions.items():
        p = _label(predicted) is Label.LOCAL
        t = _label(ground_truth[article_id]) is Label.LOCAL
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fp, fn, tn)


def metrics(cm: ConfusionMatrix) -> Scores:
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else None
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else None
    if precision is None or recall is None:
        f1 = None
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Scores(precision, recall, f1)


def local_share(local: int, total: int) -> float:
    if total <= 0:
        raise ValueError("total must be positive")
    return local / total


@dataclass(frozen=True)
class RecallSplit:
    explicit_recall: float
    implicit_recall: float
    n_local: int
    n_explicit: int
    n_implicit: int

    @property
    def total_recall(self) -> float:
        return self.explicit_recall + self.implicit_recall


def implicit_split(ground_truth_local: Iterable[str], ner_decisions: Mapping[str, Label | str],
                   model_decisions: Mapping[str, Label | str]) -> RecallSplit:
    """Split a model's recall between explicit and implicit local articles.

    An article is explicit when standalone NER already labels it LOCAL and
    implicit otherwise. Both parts are fractions of all true-local articles,
    so they add up to the model's total recall.
    """
    local_ids = list(dict.fromkeys(ground_truth_local))
    if not local_ids:
        raise ValueError("no true-local articles")
    missing = [a for a in local_ids if a not in ner_decisions or a not in model_decisions]
    if missing:
        raise KeyError(f"decisions missing for {missing[:20]}")
    explicit = [a for a in local_ids if _label(ner_decisions[a]) is Label.LOCAL]
    explicit_set = set(explicit)
    hit_explicit = sum(1 for a in explicit if _label(model_decisions[a]) is Label.LOCAL)
    hit_implicit = sum(1 for a in local_ids
                       if a not in explicit_set and _label(model_decisions[a]) is Label.LOCAL)
    n = len(local_ids)
    return RecallSplit(hit_explicit / n, hit_implicit / n, n, len(explicit), n - len(explicit))


def is_ambiguous(answers: Sequence[LocationAnswer | None]) -> bool:
    states_by_city: dict[str, set[str]] = defaultdict(set)
    for a in answers:
        if a is not None and a.city and a.state:
            states_by_city[a.city].add(a.state)
    return any(len(s) >= 2 for s in states_by_city.values())


def toponym_ambiguity_rate(per_article_answers: Mapping[str, Sequence[LocationAnswer | None]]) -> float:
    """Share of articles where one city name came back in two or more states."""
    if not per_article_answers:
        raise ValueError("no articles")
    for article_id, answers in per_article_answers.items():
        if len(answers) < 2:
            raise ValueError(f"article {article_id!r} needs at least two answers")
    flagged = sum(1 for answers in per_article_answers.values() if is_ambiguous(answers))
    return flagged / len(per_article_answers)


class FlipDirection(str, enum.Enum):
    FIXED = "FIXED"
    BROKEN = "BROKEN"


@dataclass(frozen=True)
class Flip:
    article_id: str
    direction: FlipDirection


def knowledge_noise_diff(standalone: Mapping[str, Label | str], enriched: Mapping[str, Label | str],
                         ground_truth: Mapping[str, Label | str]) -> list[Flip]:
    """Articles whose correctness changed under enrichment, sorted by id."""
    if set(standalone) != set(enriched):
        raise KeyError("standalone and enriched decisions cover different articles")
    flips = []
    for article_id in sorted(standalone):
        truth = _label(ground_truth[article_id])
        before = _label(standalone[article_id]) is truth
        after = _label(enriched[article_id]) is truth
        if before and not after:
            flips.append(Flip(article_id, FlipDirection.BROKEN))
        elif after and not before:
            flips.append(Flip(article_id, FlipDirection.FIXED))
    return flips


@dataclass(frozen=True)
class GroupStats:
    mean: float
    sd: float
    n: int

    def __post_init__(self):
        if self.sd < 0:
            raise ValueError("sd must be non-negative")
        if self.n < 2:
            raise ValueError("variance-based tests need n >= 2")


@dataclass(frozen=True)
class TTestResult:
    mean_diff: float
    pooled_sd: float
    t: float
    df: int
    p_value: float
    cohens_d: float


def t_test_pooled(a: GroupStats, b: GroupStats) -> TTestResult:
    """Student's two-sample t-test from summary statistics (equal variances assumed)."""
    df = a.n + b.n - 2
    pooled_var = ((a.n - 1) * a.sd ** 2 + (b.n - 1) * b.sd ** 2) / df
    pooled_sd = math.sqrt(pooled_var)
    diff = a.mean - b.mean
    se = pooled_sd * math.sqrt(1 / a.n + 1 / b.n)
    if se == 0:
        t = 0.0 if diff == 0 else math.copysign(math.inf, diff)
    else:
        t = diff / se
    p = float(2 * stats.t.sf(abs(t), df))
    d = diff / pooled_sd if pooled_sd else 0.0
    return TTestResult(diff, pooled_sd, t, df, p, d)


def weighted_lift(lifts: Iterable[tuple[float, float]]) -> float:
    """Weighted mean of ``(value, weight)`` pairs."""
    lifts = list(lifts)
    if any(w < 0 for _, w in lifts):
        raise ValueError("weights must be non-negative")
    total = sum(w for _, w in lifts)
    if total <= 0:
        raise ValueError("weights must sum to a positive number")
    return sum(v * w for v, w in lifts) / total


MODEL_TITLES = {
    "ner": "Standalone-NER",
    "kg_ner": "KG-Enriched NER",
    "llm": "Standalone-ChatGPT",
    "kg_llm": "KG-Enriched ChatGPT",
}


def load_predictions(path: str | Path) -> dict[str, dict[str, dict]]:
    """Predictions JSON-lines file grouped as ``model -> article_id -> record``."""
    out: dict[str, dict[str, dict]] = defaultdict(dict)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                model, article_id = rec["model"], str(rec["article_id"])
                _label(rec["label"])
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad prediction record: {exc}") from exc
            out[model][article_id] = rec
    return dict(out)


@dataclass
class ModelRow:
    model: str
    confusion: ConfusionMatrix
    scores: Scores
    split: RecallSplit | None = None


def evaluate_models(predictions: Mapping[str, Mapping[str, Label | str]],
                    ground_truth: Mapping[str, Label | str]) -> list[ModelRow]:
    """One row per model in canonical order; adds the recall split when NER predictions exist."""
    order = [m for m in MODEL_TITLES if m in predictions] + sorted(set(predictions) - set(MODEL_TITLES))
    local_ids = [a for a, lab in ground_truth.items() if _label(lab) is Label.LOCAL]
    rows = []
    for model in order:
        preds = predictions[model]
        cm = confusion(preds, ground_truth)
        row = ModelRow(model, cm, metrics(cm))
        if "ner" in predictions and local_ids:
            row.split = implicit_split(local_ids, predictions["ner"], preds)
        rows.append(row)
    return rows


def render_report(rows: Sequence[ModelRow], share: float | None = None) -> str:
    lines = [f"{'Model':<22}{'F1 Score':>10}{'Precision':>11}{'Recall':>9}"
             f"{'Explicit':>10}{'Implicit':>10}{'TP':>7}{'FP':>7}{'FN':>7}{'TN':>8}"]
    for r in rows:
        s = r.scores
        exp = pct(r.split.explicit_recall) if r.split else NA
        imp = pct(r.split.implicit_recall) if r.split else NA
        lines.append(f"{MODEL_TITLES.get(r.model, r.model):<22}{pct(s.f1):>10}{pct(s.precision):>11}"
                     f"{pct(s.recall):>9}{exp:>10}{imp:>10}{r.confusion.tp:>7}{r.confusion.fp:>7}"
                     f"{r.confusion.fn:>7}{r.confusion.tn:>8}")
    if share is not None:
        lines.append(f"local share: {pct(share)}")
    return "\n".join(lines) + "\n"


def report_dict(rows: Sequence[ModelRow], share: float | None = None) -> dict:
    out = {"models": []}
    for r in rows:
        entry = {"model": r.model, "title": MODEL_TITLES.get(r.model, r.model),
                 "confusion": asdict(r.confusion), "scores": asdict(r.scores),
                 "percent": r.scores.as_percentages()}
        if r.split:
            entry["recall_split"] = {"explicit": r.split.explicit_recall,
                                     "implicit": r.split.implicit_recall,
                                     "n_local": r.split.n_local, "n_explicit": r.split.n_explicit}
        out["models"].append(entry)
    if share is not None:
        out["local_share"] = share
    return out


def render_t_test(result: TTestResult, label: str = "") -> str:
    sig = "significant" if result.p_value < 0.05 else "non significant"
    head = f"{label}: " if label else ""
    return (f"{head}mean_diff={result.mean_diff:.2f} pooled_sd={result.pooled_sd:.2f} "
            f"t({result.df})={result.t:.2f} p={result.p_value:.4g} d={result.cohens_d:.2f} {sig}\n")
