"""Asynchronous enrichment flow: ingest, dedupe, LLM consumption, indexing and reads.

Single-process mode wires :class:`InProcessQueue` and an embedded store
(:class:`MemoryStore` or :class:`SQLiteStore`). Correctness depends only
on compare-and-set state transitions in the store and on acknowledging a
message after its store writes, so any at-least-once broker can stand in
for the in-process queues.
"""

from __future__ import annotations

import enum
import json
import logging
import queue
import sqlite3
import threading
import time
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .classify import LocalityPredicate, city_or_state_match, decide_from_answer
from .llm import LLMError, LLMOutcome, PromptRequest
from .model import Article, LocalityDecision, LocationAnswer, NewspaperProfile

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_TTL = 15 * 60.0


class EntryState(str, enum.Enum):
    PENDING = "PENDING"
    COMPLETED = "COMPLETED"


@dataclass(frozen=True)
class StoredResult:
    answer: LocationAnswer | None
    decision: LocalityDecision

    def to_dict(self) -> dict:
        return {"answer": self.answer.to_dict() if self.answer else None,
                "decision": self.decision.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "StoredResult":
        answer = data.get("answer")
        return cls(LocationAnswer.from_dict(answer) if answer else None,
                   LocalityDecision.from_dict(data["decision"]))


@dataclass(frozen=True)
class KVEntry:
    key: str
    state: EntryState
    value: StoredResult | None = None
    updated_at: float = 0.0
    version: int = 1

    def __post_init__(self):
        object.__setattr__(self, "state", EntryState(self.state))
        if self.state is EntryState.COMPLETED and self.value is None:
            raise ValueError("COMPLETED entry without a value")
        if self.state is EntryState.PENDING and self.value is not None:
            raise ValueError("PENDING entry must not carry a value")


class IllegalTransition(RuntimeError):
    pass


class StoreUnavailable(Exception):
    """Store could not be reached; the message should be redelivered."""

    retryable = True


ALLOWED_TRANSITIONS = {
    (None, EntryState.PENDING),
    (EntryState.PENDING, EntryState.PENDING),
    (EntryState.PENDING, EntryState.COMPLETED),
}


def check_transition(old: KVEntry | None, new: KVEntry) -> None:
    pair = (old.state if old else None, new.state)
    if pair not in ALLOWED_TRANSITIONS:
        raise IllegalTransition(f"{new.key[:12]}: {pair[0]} -> {pair[1]} is not allowed")


class KVStore(Protocol):
    def get(self, key: str) -> KVEntry | None: ...

    def compare_and_set(self, key: str, expected_version: int | None, new: KVEntry) -> bool: ...

    def index_article(self, article_id: str, prompt_key: str, publisher_id: str) -> None: ...

    def article_key(self, article_id: str) -> tuple[str, str] | None: ...

    def entries(self) -> list[KVEntry]: ...


class MemoryStore:
    """Thread-safe dict store. ``reads`` counts get() calls; ``transitions`` logs every write."""

    def __init__(self):
        self._data: dict[str, KVEntry] = {}
        self._articles: dict[str, tuple[str, str]] = {}
        self._lock = threading.Lock()
        self.reads = 0
        self.transitions: list[tuple[EntryState | None, EntryState]] = []
        self.available = True

    def _check(self):
        if not self.available:
            raise StoreUnavailable("memory store switched off")

    def get(self, key: str) -> KVEntry | None:
        self._check()
        self.reads += 1
        return self._data.get(key)

    def compare_and_set(self, key: str, expected_version: int | None, new: KVEntry) -> bool:
        self._check()
        with self._lock:
            current = self._data.get(key)
            if (current.version if current else None) != expected_version:
                return False
            check_transition(current, new)
            self._data[key] = new
            self.transitions.append((current.state if current else None, new.state))
            return True

    def index_article(self, article_id: str, prompt_key: str, publisher_id: str) -> None:
        self._check()
        with self._lock:
            self._articles[article_id] = (prompt_key, publisher_id)

    def article_key(self, article_id: str) -> tuple[str, str] | None:
        self._check()
        return self._articles.get(article_id)

    def entries(self) -> list[KVEntry]:
        with self._lock:
            return list(self._data.values())


class SQLiteStore:
    """Embedded persistent store; WAL mode keeps readers off the writers' lock."""

    def __init__(self, path: str | Path):
        self.path = str(path)
        self._local = threading.local()
        self.reads = 0
        with self._conn() as conn:
            conn.execute("PRAGMA journal_mode=WAL")
            conn.execute("""CREATE TABLE IF NOT EXISTS kv (
                key TEXT PRIMARY KEY, state TEXT NOT NULL, value TEXT,
                updated_at REAL NOT NULL, version INTEGER NOT NULL)""")
            conn.execute("""CREATE TABLE IF NOT EXISTS articles (
                article_id TEXT PRIMARY KEY, prompt_key TEXT NOT NULL, publisher_id TEXT NOT NULL)""")

    def _conn(self) -> sqlite3.Connection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            try:
                conn = sqlite3.connect(self.path, timeout=30.0, isolation_level=None)
            except sqlite3.Error as exc:
                raise StoreUnavailable(str(exc)) from exc
            self._local.conn = conn
        return conn

    @staticmethod
    def _row(row) -> KVEntry | None:
        if row is None:
            return None
        key, state, value, updated_at, version = row
        stored = StoredResult.from_dict(json.loads(value)) if value else None
        return KVEntry(key, EntryState(state), stored, updated_at, version)

    def get(self, key: str) -> KVEntry | None:
        self.reads += 1
        try:
            row = self._conn().execute(
                "SELECT key, state, value, updated_at, version FROM kv WHERE key = ?", (key,)).fetchone()
        except sqlite3.Error as exc:
            raise StoreUnavailable(str(exc)) from exc
        return self._row(row)

    def compare_and_set(self, key: str, expected_version: int | None, new: KVEntry) -> bool:
        conn = self._conn()
        try:
            conn.execute("BEGIN IMMEDIATE")
            try:
                current = self._row(conn.execute(
                    "SELECT key, state, value, updated_at, version FROM kv WHERE key = ?", (key,)).fetchone())
                if (current.version if current else None) != expected_version:
                    conn.execute("ROLLBACK")
                    return False
                check_transition(current, new)
                value = json.dumps(new.value.to_dict()) if new.value else None
                conn.execute("INSERT OR REPLACE INTO kv VALUES (?, ?, ?, ?, ?)",
                             (key, new.state.value, value, new.updated_at, new.version))
                conn.execute("COMMIT")
                return True
            except BaseException:
                if conn.in_transaction:
                    conn.execute("ROLLBACK")
                raise
        except sqlite3.Error as exc:
            raise StoreUnavailable(str(exc)) from exc

    def index_article(self, article_id: str, prompt_key: str, publisher_id: str) -> None:
        try:
            self._conn().execute("INSERT OR REPLACE INTO articles VALUES (?, ?, ?)",
                                 (article_id, prompt_key, publisher_id))
        except sqlite3.Error as exc:
            raise StoreUnavailable(str(exc)) from exc

    def article_key(self, article_id: str) -> tuple[str, str] | None:
        row = self._conn().execute(
            "SELECT prompt_key, publisher_id FROM articles WHERE article_id = ?", (article_id,)).fetchone()
        return tuple(row) if row else None

    def entries(self) -> list[KVEntry]:
        rows = self._conn().execute("SELECT key, state, value, updated_at, version FROM kv ORDER BY key")
        return [self._row(r) for r in rows]

    def close(self) -> None:
        conn = getattr(self._local, "conn", None)
        if conn is not None:
            conn.close()
            self._local.conn = None


class Metrics:
    NAMES = ("llm_calls", "dedup_suppressions", "cache_hits", "pending_refreshes",
             "dead_letters", "llm_failures")

    def __init__(self):
        self._lock = threading.Lock()
        self._counts = dict.fromkeys(self.NAMES, 0)

    def incr(self, name: str, by: int = 1) -> None:
        with self._lock:
            self._counts[name] = self._counts.get(name, 0) + by

    def __getitem__(self, name: str) -> int:
        with self._lock:
            return self._counts.get(name, 0)

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def render(self) -> str:
        return "".join(f"{k} {v}\n" for k, v in sorted(self.snapshot().items()))


def serve_metrics(metrics: Metrics, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Plain-text counters on ``GET /metrics`` from a daemon thread. Caller shuts it down."""

    class Handler(BaseHTTPRequestHandler):
        def do_GET(self):
            if self.path.rstrip("/") not in ("", "/metrics"):
                self.send_error(404)
                return
            body = metrics.render().encode()
            self.send_response(200)
            self.send_header("Content-Type", "text/plain; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer((host, port), Handler)
    threading.Thread(target=server.serve_forever, daemon=True, name="metrics").start()
    return server


class MessageKind(str, enum.Enum):
    NEW_ARTICLE = "NEW_ARTICLE"
    PROMPT_BATCH = "PROMPT_BATCH"
    LLM_RESULT = "LLM_RESULT"


@dataclass(frozen=True)
class QueueMessage:
    kind: MessageKind
    payload: dict
    attempt: int = 1
    message_id: str = field(default_factory=lambda: uuid.uuid4().hex)

    def __post_init__(self):
        object.__setattr__(self, "kind", MessageKind(self.kind))
        if self.attempt < 1:
            raise ValueError("attempt must be >= 1")

    def to_json(self) -> str:
        return json.dumps({"schema_version": SCHEMA_VERSION, "kind": self.kind.value,
                           "message_id": self.message_id, "attempt": self.attempt,
                           "payload": self.payload}, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, raw: str) -> "QueueMessage":
        data = json.loads(raw)
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {version!r}")
        return cls(MessageKind(data["kind"]), data["payload"], int(data["attempt"]), data["message_id"])

    def retried(self) -> "QueueMessage":
        return QueueMessage(self.kind, self.payload, self.attempt + 1, self.message_id)


def article_message(article: Article | Mapping) -> QueueMessage:
    payload = article.to_dict() if isinstance(article, Article) else dict(article)
    return QueueMessage(MessageKind.NEW_ARTICLE, payload)


@dataclass(frozen=True)
class WorkItem:
    """A prompt travelling through the pipeline with the article it came from."""

    request: PromptRequest
    publisher_id: str

    def to_dict(self) -> dict:
        return {**self.request.to_dict(), "publisher_id": self.publisher_id}

    @classmethod
    def from_dict(cls, data: Mapping) -> "WorkItem":
        return cls(PromptRequest.from_dict(data), data["publisher_id"])


def batch_message(items: Sequence[WorkItem]) -> QueueMessage:
    return QueueMessage(MessageKind.PROMPT_BATCH, {"items": [i.to_dict() for i in items]})


def result_message(entry: KVEntry) -> QueueMessage:
    return QueueMessage(MessageKind.LLM_RESULT, {"prompt_key": entry.key, **entry.value.to_dict()})


@dataclass
class Delivery:
    message: QueueMessage
    tag: int


class InProcessQueue:
    """Bounded at-least-once queue. Messages cross it in their wire format.

    A delivered message stays outstanding until acked. ``nack`` and
    ``recover`` put outstanding messages back with ``attempt`` incremented.
    """

    def __init__(self, maxsize: int = 0, name: str = "queue"):
        self.name = name
        self._q: queue.Queue[str] = queue.Queue(maxsize)
        self._lock = threading.Lock()
        self._outstanding: dict[int, QueueMessage] = {}
        self._next_tag = 0
        self.closed = False

    def put(self, message: QueueMessage, timeout: float | None = None) -> None:
        if self.closed:
            raise RuntimeError(f"{self.name} is closed")
        self._q.put(message.to_json(), timeout=timeout)

    def get(self, timeout: float | None = 0.0) -> Delivery | None:
        try:
            raw = self._q.get(block=bool(timeout), timeout=timeout or None)
        except queue.Empty:
            return None
        message = QueueMessage.from_json(raw)
        with self._lock:
            self._next_tag += 1
            self._outstanding[self._next_tag] = message
            return Delivery(message, self._next_tag)

    def ack(self, delivery: Delivery) -> None:
        with self._lock:
            self._outstanding.pop(delivery.tag, None)

    def nack(self, delivery: Delivery) -> None:
        with self._lock:
            message = self._outstanding.pop(delivery.tag, None)
        if message is not None:
            self._q.put(message.retried().to_json())

    def recover(self) -> int:
        """Redeliver everything outstanding, as after a consumer crash."""
        with self._lock:
            pending = list(self._outstanding.values())
            self._outstanding.clear()
        for message in pending:
            self._q.put(message.retried().to_json())
        return len(pending)

    def qsize(self) -> int:
        return self._q.qsize()

    def outstanding(self) -> int:
        with self._lock:
            return len(self._outstanding)

    def idle(self) -> bool:
        return self.qsize() == 0 and self.outstanding() == 0

    def close(self) -> None:
        self.closed = True


class Action(str, enum.Enum):
    FORWARD = "FORWARD"
    SUPPRESS_INFLIGHT = "SUPPRESS_INFLIGHT"
    SERVE_CACHED = "SERVE_CACHED"


@dataclass(frozen=True)
class DedupeResult:
    action: Action
    value: StoredResult | None = None


def dedupe(request: PromptRequest, store: KVStore, *, now: float, ttl: float = DEFAULT_TTL,
           metrics: Metrics | None = None) -> DedupeResult:
    """Decide whether a prompt goes to the LLM, using PENDING as an in-flight marker.

    Every write is a compare-and-set, so concurrent callers for one key see
    exactly one FORWARD per PENDING generation.
    """
    key = request.prompt_key
    while True:
        entry = store.get(key)
        if entry is None:
            if store.compare_and_set(key, None, KVEntry(key, EntryState.PENDING, None, now, 1)):
                return DedupeResult(Action.FORWARD)
            continue
        if entry.state is EntryState.COMPLETED:
            return DedupeResult(Action.SERVE_CACHED, entry.value)
        if now - entry.updated_at < ttl:
            if metrics:
                metrics.incr("dedup_suppressions")
            return DedupeResult(Action.SUPPRESS_INFLIGHT)
        refreshed = KVEntry(key, EntryState.PENDING, None, now, entry.version + 1)
        if store.compare_and_set(key, entry.version, refreshed):
            if metrics:
                metrics.incr("pending_refreshes")
            return DedupeResult(Action.FORWARD)


@dataclass
class StreamOutput:
    batches: list[list[WorkItem]] = field(default_factory=list)
    dead_letters: list[tuple[QueueMessage, str]] = field(default_factory=list)


def stream_consume(messages: Iterable[QueueMessage], prompt_builder: Callable[[Article], PromptRequest],
                   batch_size: int = 8) -> StreamOutput:
    """Turn NEW_ARTICLE messages into prompt batches of at most ``batch_size``.

    Malformed articles are dead-lettered with the reason; the rest proceed.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    out = StreamOutput()
    items: list[WorkItem] = []
    for message in messages:
        try:
            if message.kind is not MessageKind.NEW_ARTICLE:
                raise ValueError(f"unexpected message kind {message.kind.value}")
            article = Article.from_dict(message.payload)
            items.append(WorkItem(prompt_builder(article), article.publisher_id))
        except Exception as exc:  # noqa: BLE001 - any bad record is dead-lettered, never fatal
            logger.warning("dead-lettering message %s: %s", message.message_id, exc)
            out.dead_letters.append((message, str(exc)))
    out.batches = [items[i:i + batch_size] for i in range(0, len(items), batch_size)]
    return out


Resolver = Callable[[PromptRequest], LLMOutcome]


def llm_consume(items: Sequence[WorkItem], resolver: Resolver, store: KVStore,
                profiles: Mapping[str, NewspaperProfile], *, now: Callable[[], float] = time.time,
                predicate: LocalityPredicate = city_or_state_match,
                metrics: Metrics | None = None) -> list[KVEntry]:
    """Resolve each PENDING prompt and commit it as COMPLETED, key by key.

    A prompt whose LLM calls fail stays PENDING for a later re-forward. A
    prompt that is no longer PENDING (already completed elsewhere) is skipped.
    """
    done = []
    for item in items:
        key = item.request.prompt_key
        entry = store.get(key)
        if entry is None or entry.state is not EntryState.PENDING:
            continue
        profile = profiles.get(item.publisher_id)
        if profile is None:
            logger.warning("no profile for publisher %r; %s left PENDING", item.publisher_id, key[:12])
            continue
        if metrics:
            metrics.incr("llm_calls")
        try:
            outcome = resolver(item.request)
        except LLMError as exc:
            if metrics:
                metrics.incr("llm_failures")
            logger.warning("LLM failed for %s (%s); left PENDING", item.request.article_id, exc)
            continue
        decision = decide_from_answer(item.request.article_id, outcome.merged, profile, predicate,
                                      outcome.diagnostics)
        new = KVEntry(key, EntryState.COMPLETED, StoredResult(outcome.merged, decision), now(),
                      entry.version + 1)
        if store.compare_and_set(key, entry.version, new):
            done.append(new)
    return done


class ReadPath:
    """Cache in front of the store for serving-time lookups. Never waits on the LLM."""

    def __init__(self, store: KVStore, profiles: Mapping[str, NewspaperProfile],
                 predicate: LocalityPredicate = city_or_state_match, metrics: Metrics | None = None):
        self.store = store
        self.profiles = profiles
        self.predicate = predicate
        self.metrics = metrics
        self._cache: dict[str, LocalityDecision] = {}
        self._lock = threading.Lock()

    def __call__(self, article_id: str) -> LocalityDecision | None:
        return self.get(article_id)

    def get(self, article_id: str) -> LocalityDecision | None:
        with self._lock:
            hit = self._cache.get(article_id)
        if hit is not None:
            if self.metrics:
                self.metrics.incr("cache_hits")
            return hit
        try:
            located = self.store.article_key(article_id)
            entry = self.store.get(located[0]) if located else None
        except StoreUnavailable as exc:
            logger.warning("read path store miss for %s: %s", article_id, exc)
            return None
        if entry is None or entry.state is not EntryState.COMPLETED:
            return None
        decision = entry.value.decision
        if decision.article_id != article_id:
            profile = self.profiles.get(located[1])
            if profile is None:
                logger.warning("no profile for publisher %r", located[1])
                return None
            decision = decide_from_answer(article_id, entry.value.answer, profile, self.predicate)
        with self._lock:
            # COMPLETED is terminal, so cached decisions never go stale
            self._cache[article_id] = decision
        return decision


class ArticleSource(Protocol):
    def fetch(self, after: str | None, limit: int) -> list[Article]: ...


class ListSource:
    """Article source over an in-memory list, paged by ascending id."""

    def __init__(self, articles: Iterable[Article], fail_after: int | None = None):
        self.articles = sorted(articles, key=lambda a: a.id)
        self.fail_after = fail_after
        self.served = 0

    def fetch(self, after: str | None, limit: int) -> list[Article]:
        page = [a for a in self.articles if after is None or a.id > after][:limit]
        if self.fail_after is not None and self.served + len(page) > self.fail_after:
            raise IOError("article source unavailable")
        self.served += len(page)
        return page


@dataclass(frozen=True)
class BackfillResult:
    enqueued: int
    cursor: str | None
    complete: bool
    error: str | None = None


def backfill(source: ArticleSource, new_articles: InProcessQueue, *, cursor: str | None = None,
             page_size: int = 100) -> BackfillResult:
    """Re-inject old articles as NEW_ARTICLE messages, resumable from ``cursor``."""
    count = 0
    while True:
        try:
            page = source.fetch(cursor, page_size)
        except Exception as exc:  # noqa: BLE001 - report a partial run with its resume point
            logger.warning("backfill stopped after %d articles at cursor %r: %s", count, cursor, exc)
            return BackfillResult(count, cursor, False, str(exc))
        if not page:
            return BackfillResult(count, cursor, True)
        for article in page:
            new_articles.put(article_message(article))
            count += 1
            cursor = article.id


class Pipeline:
    """The whole offline flow in one process.

    Call :meth:`run_until_idle` to drive it synchronously (tests, batch
    jobs) or :meth:`start` / :meth:`stop` to run consumer threads.
    """

    def __init__(self, prompt_builder: Callable[[Article], PromptRequest], resolver: Resolver,
                 store: KVStore, profiles: Mapping[str, NewspaperProfile], *,
                 batch_size: int = 8, ttl: float = DEFAULT_TTL, clock: Callable[[], float] = time.time,
                 predicate: LocalityPredicate = city_or_state_match, queue_size: int = 0,
                 metrics: Metrics | None = None, publish_results: bool = False):
        self.prompt_builder = prompt_builder
        self.resolver = resolver
        self.store = store
        self.profiles = profiles
        self.batch_size = batch_size
        self.ttl = ttl
        self.clock = clock
        self.predicate = predicate
        self.metrics = metrics or Metrics()
        self.new_articles = InProcessQueue(queue_size, "new-articles")
        self.prompt_batches = InProcessQueue(queue_size, "prompt-batches")
        self.results = InProcessQueue(0, "llm-results") if publish_results else None
        self.dead_letters: list[tuple[QueueMessage, str]] = []
        self.read_path = ReadPath(store, profiles, predicate, self.metrics)
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()

    def submit(self, article: Article | Mapping) -> None:
        self.new_articles.put(article_message(article))

    def stream_step(self, max_messages: int | None = None, timeout: float = 0.0) -> int:
        """Consume available NEW_ARTICLE messages; returns how many were taken."""
        limit = max_messages or self.batch_size
        deliveries = []
        while len(deliveries) < limit:
            d = self.new_articles.get(timeout if not deliveries else 0.0)
            if d is None:
                break
            deliveries.append(d)
        if not deliveries:
            return 0
        try:
            out = stream_consume([d.message for d in deliveries], self.prompt_builder, self.batch_size)
            for message, reason in out.dead_letters:
                self.dead_letters.append((message, reason))
                self.metrics.incr("dead_letters")
            now = self.clock()
            for batch in out.batches:
                forward = []
                for item in batch:
                    self.store.index_article(item.request.article_id, item.request.prompt_key,
                                             item.publisher_id)
                    result = dedupe(item.request, self.store, now=now, ttl=self.ttl, metrics=self.metrics)
                    if result.action is Action.FORWARD:
                        forward.append(item)
                if forward:
                    self.prompt_batches.put(batch_message(forward))
        except StoreUnavailable as exc:
            logger.warning("store unavailable in stream step (%s); redelivering", exc)
            for d in deliveries:
                self.new_articles.nack(d)
            return len(deliveries)
        for d in deliveries:
            self.new_articles.ack(d)
        return len(deliveries)

    def llm_step(self, timeout: float = 0.0) -> int:
        """Consume one PROMPT_BATCH; returns the number of entries completed."""
        d = self.prompt_batches.get(timeout)
        if d is None:
            return 0
        try:
            items = [WorkItem.from_dict(x) for x in d.message.payload["items"]]
            done = llm_consume(items, self.resolver, self.store, self.profiles, now=self.clock,
                               predicate=self.predicate, metrics=self.metrics)
        except StoreUnavailable as exc:
            logger.warning("store unavailable in LLM step (%s); redelivering", exc)
            self.prompt_batches.nack(d)
            return 0
        except (KeyError, ValueError) as exc:
            logger.warning("dead-lettering prompt batch %s: %s", d.message.message_id, exc)
            self.dead_letters.append((d.message, str(exc)))
            self.metrics.incr("dead_letters")
            self.prompt_batches.ack(d)
            return 0
        if self.results is not None:
            for entry in done:
                self.results.put(result_message(entry))
        self.prompt_batches.ack(d)
        return len(done)

    def run_until_idle(self, max_rounds: int = 100_000) -> None:
        for _ in range(max_rounds):
            moved = self.stream_step(max_messages=self.batch_size)
            while self.prompt_batches.qsize():
                self.llm_step()
                moved += 1
            if not moved and self.new_articles.idle() and self.prompt_batches.idle():
                return
        raise RuntimeError("pipeline did not quiesce")

    def quiescent(self) -> bool:
        return self.new_articles.idle() and self.prompt_batches.idle()

    def start(self, stream_workers: int = 1, llm_workers: int = 2, poll: float = 0.05) -> None:
        if self._threads:
            raise RuntimeError("pipeline already started")
        self._stop.clear()

        def loop(step):
            while not self._stop.is_set():
                try:
                    step(timeout=poll)
                except Exception:  # noqa: BLE001 - a consumer thread must survive bad messages
                    logger.exception("consumer step failed")

        for i in range(stream_workers):
            self._threads.append(threading.Thread(
                target=loop, args=(lambda timeout: self.stream_step(timeout=timeout),),
                name=f"stream-{i}", daemon=True))
        for i in range(llm_workers):
            self._threads.append(threading.Thread(
                target=loop, args=(self.llm_step,), name=f"llm-{i}", daemon=True))
        for t in self._threads:
            t.start()

    def wait_idle(self, timeout: float = 30.0, poll: float = 0.02) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.quiescent():
                return True
            time.sleep(poll)
        return self.quiescent()

    def stop(self, drain: bool = True, timeout: float = 30.0) -> None:
        """Stop consumers. With ``drain`` the queues are emptied first.

        Entries are only ever PENDING or COMPLETED, so stopping at any point
        leaves the store consistent; undrained prompts stay PENDING.
        """
        if drain and self._threads:
            self.wait_idle(timeout)
        self._stop.set()
        for t in self._threads:
            t.join(timeout)
        self._threads.clear()
