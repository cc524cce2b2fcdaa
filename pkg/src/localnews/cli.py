"""Command-line entry point: ``localnews {classify,evaluate,report-ab,pipeline,backfill}``.

Exit codes: 0 success, 1 usage, 2 data validation, 3 external-service failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from datetime import datetime, timezone
from pathlib import Path

from .classify import LocalNewsClassifier, decide_from_answer
from .config import ConfigError, RunConfig
from .evaluation import (
    GroupStats,
    evaluate_models,
    local_share,
    load_predictions,
    render_report,
    render_t_test,
    report_dict,
    t_test_pooled,
)
from .kg import KGError
from .llm import LLMError, resolve_prompt
from .model import Label, ground_truth_label, load_corpus, load_profiles
from .ner import NERError
from .pipeline import ListSource, MemoryStore, Pipeline, SQLiteStore, backfill, serve_metrics

logger = logging.getLogger("localnews")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SERVICE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--deterministic", action="store_true", help="omit timestamps from outputs")


def _llm_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", help="ner, kg_ner, llm or kg_llm")
    p.add_argument("--enrich", action="store_true", default=None, help="add KG triplets to LLM prompts")
    p.add_argument("--runs", type=int, help="LLM runs per prompt")
    p.add_argument("--mock-llm", help="scripted LLM replies (JSON map key -> bodies)")
    p.add_argument("--mock-ner", help="recorded mentions (JSON map article_id -> mentions)")
    p.add_argument("--corpus", help="articles, JSON lines")
    p.add_argument("--profiles", help="newspaper profiles, JSON array")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="localnews", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("classify", help="label every tagged article with one model")
    _common(p)
    _llm_flags(p)
    p.add_argument("--out", default="-", help="predictions file (JSON lines); '-' for stdout")

    p = sub.add_parser("evaluate", help="score a predictions file against editorial tags")
    _common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--metadata", help='JSON {"local": n, "total": m} overriding corpus counts')
    p.add_argument("--json", dest="json_out", help="also write a machine-readable report here")

    p = sub.add_parser("report-ab", help="pooled two-sample t-test from group summary statistics")
    _common(p)
    p.add_argument("--stats", required=True,
                   help='JSON {metric: {"variant": {mean, sd, n}, "control": {mean, sd, n}}}')

    for name, helptext in (("pipeline", "run the ingest/dedupe/LLM pipeline in-process"),
                           ("backfill", "re-inject old articles through the pipeline")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        _llm_flags(p)
        p.add_argument("--store", help="SQLite store path (default: in-memory)")
        p.add_argument("--batch-size", type=int)
        p.add_argument("--ttl", type=float, help="PENDING staleness TTL in seconds")
        p.add_argument("--workers", type=int, default=2, help="LLM consumer threads")
        if name == "pipeline":
            p.add_argument("--feed", help="articles to submit on start (JSON lines)")
            p.add_argument("--until-idle", action="store_true",
                           help="exit once every queue is drained instead of waiting for a signal")
        else:
            p.add_argument("--cursor", help="resume after this article id")
            p.add_argument("--page-size", type=int, default=100)
    return parser


def _config(args) -> RunConfig:
    llm = {"mock": args.mock_llm} if getattr(args, "mock_llm", None) else None
    ner = {"mock": args.mock_ner} if getattr(args, "mock_ner", None) else None
    cfg = RunConfig.load(
        args.config,
        model=getattr(args, "model", None),
        enrich=getattr(args, "enrich", None),
        runs=getattr(args, "runs", None),
        corpus=getattr(args, "corpus", None),
        profiles=getattr(args, "profiles", None),
        batch_size=getattr(args, "batch_size", None),
        ttl_seconds=getattr(args, "ttl", None),
        store_path=getattr(args, "store", None),
    )
    if llm:
        cfg.llm = {**cfg.llm, **llm}
    if ner:
        cfg.ner = {**cfg.ner, **ner}
    cfg.validate()
    return cfg


def _open_out(path: str):
    return sys.stdout if path == "-" else open(path, "w", encoding="utf-8")


def cmd_classify(args) -> int:
    cfg = _config(args)
    model = cfg.effective_model
    clf = cfg.build_classifier()
    corpus = load_corpus(cfg.corpus)
    profiles = load_profiles(cfg.profiles)
    out = _open_out(args.out)
    try:
        for article in corpus:
            if ground_truth_label(article) is None:
                continue
            profile = profiles.get(article.publisher_id)
            if profile is None:
                raise DataError(f"article {article.id!r}: no profile for publisher {article.publisher_id!r}")
            record = {"article_id": article.id, "model": model}
            if model in ("llm", "kg_llm"):
                outcome = clf.resolve(article, enrich=model == "kg_llm")
                decision = decide_from_answer(article.id, outcome.merged, profile, clf.predicate,
                                              outcome.diagnostics)
                answer = outcome.merged
                record.update(city=answer.city if answer else None, state=answer.state if answer else None,
                              country=answer.country if answer else None)
            else:
                decision = clf.classify(model, article, profile)
            record.update(label=decision.label.value, matched_on=decision.matched_on.value)
            out.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_evaluate(args) -> int:
    corpus = load_corpus(args.corpus)
    inconsistent: list[str] = []
    truth = {}
    for a in corpus:
        label = ground_truth_label(a, inconsistent)
        if label is not None:
            truth[a.id] = label
    preds = load_predictions(args.predictions)
    by_model = {m: {aid: rec["label"] for aid, rec in recs.items()} for m, recs in preds.items()}
    problems = []
    for model, labels in by_model.items():
        extra = sorted(set(labels) - set(truth))
        absent = sorted(set(truth) - set(labels))
        if extra:
            problems.append(f"{model}: predictions without a tagged article: {', '.join(extra[:20])}")
        if absent:
            problems.append(f"{model}: tagged articles without a prediction: {', '.join(absent[:20])}")
    if problems:
        raise DataError("orphan article ids\n  " + "\n  ".join(problems))
    if args.metadata:
        with open(args.metadata, encoding="utf-8") as fh:
            meta = json.load(fh)
        share = local_share(int(meta["local"]), int(meta["total"]))
    else:
        share = local_share(sum(1 for v in truth.values() if v is Label.LOCAL), len(corpus)) if corpus else None
    rows = evaluate_models(by_model, truth)
    sys.stdout.write(render_report(rows, share))
    if inconsistent:
        sys.stdout.write(f"excluded {len(inconsistent)} conflicting-tag articles\n")
    if args.json_out:
        report = report_dict(rows, share)
        report["excluded_conflicting"] = inconsistent
        if not args.deterministic:
            report["generated_at"] = datetime.now(timezone.utc).isoformat()
        Path(args.json_out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_report_ab(args) -> int:
    with open(args.stats, encoding="utf-8") as fh:
        data = json.load(fh)
    for metric, groups in data.items():
        try:
            a = GroupStats(**groups["variant"])
            b = GroupStats(**groups["control"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"{metric}: need variant/control with mean, sd, n ({exc})") from exc
        except ValueError as exc:
            raise UsageError(f"{metric}: {exc}") from exc
        sys.stdout.write(render_t_test(t_test_pooled(a, b), metric))
    return EXIT_OK


def build_pipeline(cfg: RunConfig) -> tuple[Pipeline, LocalNewsClassifier]:
    """Single-binary wiring: in-process queues plus the configured store and endpoint."""
    clf = cfg.build_classifier()
    if clf.endpoint is None:
        raise UsageError("pipeline needs an LLM endpoint (llm.url or --mock-llm)")
    store = SQLiteStore(cfg.store_path) if cfg.store_path else MemoryStore()
    enrich = cfg.effective_model == "kg_llm"

    def resolver(request):
        return resolve_prompt(clf.endpoint, request, clf.gazetteer, clf.runs,
                              max_retries=clf.max_retries, backoff=clf.backoff)

    pipe = Pipeline(lambda article: clf.prompt_for(article, enrich), resolver, store,
                    load_profiles(cfg.profiles), batch_size=cfg.batch_size, ttl=cfg.ttl_seconds)
    return pipe, clf


def _summary(pipe: Pipeline) -> None:
    states = {}
    for e in pipe.store.entries():
        states[e.state.value] = states.get(e.state.value, 0) + 1
    sys.stdout.write(pipe.metrics.render())
    for state, n in sorted(states.items()):
        sys.stdout.write(f"entries_{state.lower()} {n}\n")
    sys.stdout.write(f"dead_letters_total {len(pipe.dead_letters)}\n")


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    pipe, _ = build_pipeline(cfg)
    server = serve_metrics(pipe.metrics, port=cfg.metrics_port) if cfg.metrics_port is not None else None
    stop = threading.Event()
    if threading.current_thread() is threading.main_thread():
        for sig in (signal.SIGINT, signal.SIGTERM):
            signal.signal(sig, lambda *_: stop.set())
    if args.feed:
        for article in load_corpus(args.feed):
            pipe.submit(article)
    try:
        if args.until_idle:
            pipe.run_until_idle()
        else:
            pipe.start(llm_workers=max(1, args.workers))
            while not stop.wait(0.2):
                pass
            pipe.stop(drain=True)
    finally:
        if server:
            server.shutdown()
    _summary(pipe)
    return EXIT_OK


def cmd_backfill(args) -> int:
    cfg = _config(args)
    pipe, _ = build_pipeline(cfg)
    result = backfill(ListSource(load_corpus(cfg.corpus)), pipe.new_articles,
                      cursor=args.cursor, page_size=args.page_size)
    pipe.run_until_idle()
    sys.stdout.write(f"enqueued {result.enqueued}\ncursor {result.cursor}\n")
    _summary(pipe)
    if not result.complete:
        sys.stderr.write(f"backfill incomplete: {result.error}; resume with --cursor {result.cursor}\n")
        return EXIT_SERVICE
    return EXIT_OK


COMMANDS = {
    "classify": cmd_classify,
    "evaluate": cmd_evaluate,
    "report-ab": cmd_report_ab,
    "pipeline": cmd_pipeline,
    "backfill": cmd_backfill,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, RuntimeError) as exc:
        sys.stderr.write(f"localnews: {exc}\n")
        return EXIT_USAGE
    except (DataError, KeyError, ValueError, OSError) as exc:
        sys.stderr.write(f"localnews: data error: {exc}\n")
        return EXIT_DATA
    except (LLMError, KGError, NERError) as exc:
        sys.stderr.write(f"localnews: external service failure: {exc}\n")
        return EXIT_SERVICE


if __name__ == "__main__":
    sys.exit(main())
