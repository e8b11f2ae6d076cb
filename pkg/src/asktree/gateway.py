"""Single choke-point for model calls.

Everything that talks to a language model goes through :class:`Gateway`:
prompt templating, retry with exponential backoff, bounded-concurrency batch
completion, yes/no answer parsing, and a per-(question, sample) answer cache.
Backends are pluggable; the scripted :class:`MockBackend` makes every
pipeline stage reproducible offline.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import re
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from string import Formatter
from typing import Callable, Mapping, Optional, Protocol, Sequence

from .data import Sample
from .errors import FatalBackendError, TemplateError, TransientBackendError

logger = logging.getLogger(__name__)


class TemplateId(str, enum.Enum):
    TASK_CONTEXT = "TaskContext"
    INSIGHT_BATCH = "InsightBatch"
    INSIGHT_SYNTHESIS = "InsightSynthesis"
    QUESTION_GEN = "QuestionGen"
    INFERENCE_ANSWER = "InferenceAnswer"
    CATEGORY_GROUP = "CategoryGroup"
    VANILLA_BASELINE = "VanillaBaseline"
    FEWSHOT_BASELINE = "FewShotBaseline"
    REBUILD_ADVICE = "RebuildAdvice"


@dataclass(frozen=True)
class PromptTemplate:
    id: TemplateId
    body: str


_BODIES = {
    TemplateId.TASK_CONTEXT: (
        "You are a domain analyst working on the following task: {task}\n"
        "Keep this task in mind as context for every later instruction."
    ),
    TemplateId.INSIGHT_BATCH: (
        "Task: {task}\n"
        "Below is a batch of positive-class records as JSON. Write a concise\n"
        "summary of the traits these records have in common, one observation\n"
        "per line.\n\nRecords:\n{samples_json}"
    ),
    TemplateId.INSIGHT_SYNTHESIS: (
        "Task: {task}\n"
        "Below are several batch summaries of positive-class records. Merge\n"
        "them into a single deduplicated list of insights, one per line.\n\n"
        "{summaries}"
    ),
    TemplateId.QUESTION_GEN: (
        "Task: {task}\n"
        "You act as a decision node in a decision tree over labeled records.\n"
        "Propose up to {max_questions} split questions for the feature\n"
        "'{feature_name}' (kind: {feature_kind}). Observed values:\n"
        "{feature_stats_json}\n"
        "Known insights:\n{insights}\n"
        "Expert advice (may be empty):\n{advice}\n"
        "Allowed kinds: {allowed_kinds}. Reply with one candidate per line:\n"
        "KIND | question text | payload\n"
        "INFERENCE takes no payload. CODE's payload is a predicate over the\n"
        "record's features using ==, !=, <, <=, >, >=, contains, starts_with,\n"
        "is_missing, in {{...}}, combined with and/or/not. CLUSTERING's payload\n"
        "maps each category to a group label, like US=g1; UK=g1; DE=g2, or is\n"
        "empty to let the caller group the categories automatically."
    ),
    TemplateId.INFERENCE_ANSWER: (
        "Task: {task}\n"
        "Answer the question strictly about the record below. Reply with a\n"
        "single word: Yes or No. If the record does not contain enough\n"
        "information to answer, reply Unknown.\n"
        "Question: {question}\n"
        "Record:\n{sample_json}"
    ),
    TemplateId.CATEGORY_GROUP: (
        "Task: {task}\n"
        "Group the following category values of feature '{feature_name}' into\n"
        "at most {max_groups} groups of similar values:\n{categories_json}\n"
        "Reply one line per category, formatted as: category -> group_label"
    ),
    TemplateId.VANILLA_BASELINE: (
        "{task}\n"
        "Record:\n{sample_json}\n"
        "Should this record be classified as positive? Reply Yes or No."
    ),
    TemplateId.FEWSHOT_BASELINE: (
        "{task}\n"
        "Labeled examples:\n{exemplars_json}\n"
        "Record:\n{sample_json}\n"
        "Should this record be classified as positive? Reply Yes or No."
    ),
    TemplateId.REBUILD_ADVICE: (
        "Task: {task}\n"
        "An expert gave this advice for rebuilding part of the decision tree:\n"
        "{advice}\n"
        "Restate the advice as a short list of concrete checks, one per line."
    ),
}

DEFAULT_TEMPLATES: dict[TemplateId, PromptTemplate] = {
    tid: PromptTemplate(tid, body) for tid, body in _BODIES.items()
}


def render_prompt(template: PromptTemplate, bindings: Mapping[str, object]) -> str:
    """Substitute named placeholders; every placeholder must be bound."""
    for _, name, _, _ in Formatter().parse(template.body):
        if name is None:
            continue
        if name == "" or name.isdigit():
            raise TemplateError(f"{template.id.value}: positional placeholders not allowed")
        if name not in bindings:
            raise TemplateError(f"{template.id.value}: unbound placeholder {name!r}")
    return template.body.format(**bindings)


# ---------------------------------------------------------------------------
# Requests, responses, answers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.0
    max_tokens: int = 1024


@dataclass(frozen=True)
class LlmRequest:
    template_id: TemplateId
    prompt: str
    params: DecodingParams = DecodingParams()
    bindings: Mapping[str, object] = field(default_factory=dict)
    correlation_id: str = ""


@dataclass(frozen=True)
class LlmResponse:
    text: str
    correlation_id: str
    backend: str
    tokens: int = 0
    attempts: int = 1
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class Verdict(enum.Enum):
    YES = "yes"
    NO = "no"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Answer:
    verdict: Verdict
    raw: str = ""

    @property
    def failed(self) -> bool:
        """True when the verdict stands in for a failed call, not a reply."""
        return self.raw.startswith("[error]")


_FIRST_WORD = re.compile(r"[A-Za-z]+")


def parse_answer(text: str) -> Answer:
    """Map the leading affirmative/negative token to Yes/No, else Unknown."""
    m = _FIRST_WORD.search(text or "")
    token = m.group().casefold() if m else ""
    if token == "yes":
        return Answer(Verdict.YES, text)
    if token == "no":
        return Answer(Verdict.NO, text)
    return Answer(Verdict.UNKNOWN, text)


def canonical_question(text: str) -> str:
    return " ".join(text.split()).casefold()


def sample_json(sample: Sample) -> str:
    return json.dumps(
        {"id": sample.id, "features": dict(sorted(sample.features.items()))},
        sort_keys=True,
    )


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


class Backend(Protocol):
    name: str

    def complete(self, request: LlmRequest) -> str: ...


class MockBackend:
    """Deterministic scripted backend.

    Behavior is a handler per template id; handlers are pure functions of the
    request, so runs are bit-reproducible.  Failures can be scripted for
    retry tests, and an optional latency plus an in-flight counter let tests
    observe the gateway's concurrency bound.
    """

    name = "mock"

    def __init__(
        self,
        handlers: Optional[Mapping[TemplateId, Callable[[LlmRequest], str]]] = None,
        default_text: str = "Unknown",
        latency: float = 0.0,
    ):
        self.handlers = dict(handlers or {})
        self.default_text = default_text
        self.latency = latency
        self.calls: list[LlmRequest] = []
        self._lock = threading.Lock()
        self._failures: deque[BaseException] = deque()
        self._in_flight = 0
        self.peak_in_flight = 0

    def fail_next(self, count: int = 1, fatal: bool = False, message: str = "scripted failure"):
        exc_type = FatalBackendError if fatal else TransientBackendError
        with self._lock:
            for _ in range(count):
                self._failures.append(exc_type(message))

    def call_count(self, template_id: Optional[TemplateId] = None) -> int:
        with self._lock:
            if template_id is None:
                return len(self.calls)
            return sum(1 for c in self.calls if c.template_id == template_id)

    def complete(self, request: LlmRequest) -> str:
        with self._lock:
            self.calls.append(request)
            self._in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self._in_flight)
            failure = self._failures.popleft() if self._failures else None
        try:
            if failure is not None:
                raise failure
            if self.latency:
                time.sleep(self.latency)
            handler = self.handlers.get(request.template_id)
            if handler is None:
                return self.default_text
            return handler(request)
        finally:
            with self._lock:
                self._in_flight -= 1


class LiveHttpBackend:
    """Chat-completion style HTTPS backend with JSON bodies.

    The provider's exact wire schema stays isolated here; credentials come
    from the environment variable named in the configuration.
    """

    name = "live"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "ASKTREE_API_KEY",
        timeout: float = 60.0,
        client=None,
    ):
        import httpx

        api_key = os.environ.get(api_key_env)
        if not api_key:
            raise FatalBackendError(
                f"environment variable {api_key_env} is not set"
            )
        self.endpoint = endpoint
        self.model = model
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = {
            "Authorization": f"Bearer {api_key}",
            "Content-Type": "application/json",
        }

    def complete(self, request: LlmRequest) -> str:
        import httpx

        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
        }
        try:
            resp = self._client.post(self.endpoint, json=body, headers=self._headers)
        except httpx.HTTPError as exc:
            raise TransientBackendError(f"transport error: {exc}") from exc
        if resp.status_code in (401, 403):
            raise FatalBackendError(f"authentication failed ({resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"backend busy ({resp.status_code})")
        if resp.status_code >= 400:
            raise FatalBackendError(f"bad request ({resp.status_code}): {resp.text[:200]}")
        payload = resp.json()
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransientBackendError(f"malformed response body: {exc}") from exc


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"  # mock | live
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "ASKTREE_API_KEY"


def make_backend(config: BackendConfig) -> Backend:
    if config.kind == "mock":
        return default_mock_backend()
    if config.kind == "live":
        if not config.endpoint or not config.model:
            raise FatalBackendError("live backend needs an endpoint and a model")
        return LiveHttpBackend(config.endpoint, config.model, config.api_key_env)
    raise FatalBackendError(f"unknown backend kind {config.kind!r}")


# ---------------------------------------------------------------------------
# Retry policy and the gateway
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 0.05
    max_delay: float = 2.0


class AnswerCache:
    """Thread-safe answer store keyed by (canonical question, sample id)."""

    def __init__(self):
        self._data: dict[tuple[str, str], Answer] = {}
        self._lock = threading.Lock()
        self._key_locks: dict[tuple[str, str], threading.Lock] = {}

    def __len__(self) -> int:
        return len(self._data)

    def get_or_compute(
        self, key: tuple[str, str], compute: Callable[[], Answer]
    ) -> tuple[Answer, bool]:
        """Return (answer, was_cached); compute at most once per key."""
        with self._lock:
            if key in self._data:
                return self._data[key], True
            key_lock = self._key_locks.setdefault(key, threading.Lock())
        with key_lock:
            with self._lock:
                if key in self._data:
                    return self._data[key], True
            value = compute()
            with self._lock:
                self._data[key] = value
                self._key_locks.pop(key, None)
            return value, False

    def to_dict(self) -> dict[str, list[str]]:
        with self._lock:
            return {
                f"{q}\x1f{sid}": [a.verdict.value, a.raw]
                for (q, sid), a in self._data.items()
            }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Sequence[str]]) -> "AnswerCache":
        cache = cls()
        for key, (verdict, text) in raw.items():
            q, _, sid = key.rpartition("\x1f")
            cache._data[(q, sid)] = Answer(Verdict(verdict), text)
        return cache


class Gateway:
    """Templated, retried, concurrency-bounded access to one backend."""

    def __init__(
        self,
        backend: Backend,
        retry: RetryPolicy = RetryPolicy(),
        max_in_flight: int = 8,
        cache: Optional[AnswerCache] = None,
        templates: Optional[Mapping[TemplateId, PromptTemplate]] = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.retry = retry
        self.max_in_flight = max(1, max_in_flight)
        self.cache = cache if cache is not None else AnswerCache()
        self.templates = dict(templates or DEFAULT_TEMPLATES)
        self._sleep = sleeper
        self._lock = threading.Lock()
        self._counter = 0
        self.total_tokens = 0
        self.total_calls = 0

    # -- request construction ------------------------------------------------

    def request(
        self,
        template_id: TemplateId,
        bindings: Mapping[str, object],
        params: DecodingParams = DecodingParams(),
    ) -> LlmRequest:
        prompt = render_prompt(self.templates[template_id], bindings)
        with self._lock:
            self._counter += 1
            corr = f"req-{self._counter:06d}"
        return LlmRequest(
            template_id=template_id,
            prompt=prompt,
            params=params,
            bindings=dict(bindings),
            correlation_id=corr,
        )

    # -- completion ----------------------------------------------------------

    def complete(self, request: LlmRequest) -> LlmResponse:
        """One completion with retries; exhausted retries become an error marker."""
        last_error = "no attempts made"
        attempts = 0
        for attempt in range(1, self.retry.max_attempts + 1):
            attempts = attempt
            try:
                text = self.backend.complete(request)
            except TransientBackendError as exc:
                last_error = str(exc)
                if attempt < self.retry.max_attempts:
                    delay = min(
                        self.retry.base_delay * (2 ** (attempt - 1)),
                        self.retry.max_delay,
                    )
                    self._sleep(delay)
                continue
            tokens = (len(request.prompt) + len(text)) // 4 + 1
            response = LlmResponse(
                text=text,
                correlation_id=request.correlation_id,
                backend=self.backend.name,
                tokens=tokens,
                attempts=attempts,
            )
            self._account(response)
            return response
        logger.warning(
            "request %s failed after %d attempts: %s",
            request.correlation_id,
            attempts,
            last_error,
        )
        response = LlmResponse(
            text="",
            correlation_id=request.correlation_id,
            backend=self.backend.name,
            tokens=0,
            attempts=attempts,
            error=last_error,
        )
        self._account(response)
        return response

    def _account(self, response: LlmResponse) -> None:
        with self._lock:
            self.total_calls += 1
            self.total_tokens += response.tokens

    def complete_batch(
        self,
        requests: Sequence[LlmRequest],
        max_in_flight: Optional[int] = None,
    ) -> list[LlmResponse]:
        """Complete many requests concurrently, bounded by max_in_flight.

        Responses are positionally aligned with requests; per-request retry
        exhaustion yields an error-marked response instead of aborting the
        batch.  Fatal backend errors do abort.
        """
        if not requests:
            return []
        workers = max(1, max_in_flight or self.max_in_flight)
        if workers == 1 or len(requests) == 1:
            return [self.complete(r) for r in requests]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(self.complete, requests))

    # -- yes/no answering ------------------------------------------------------

    def answer_yes_no(self, question: str, sample: Sample, task: str) -> Answer:
        """Cached, temperature-0 yes/no answer for one (question, sample) pair."""
        if not question.strip():
            raise ValueError("question must be non-empty")
        key = (canonical_question(question), sample.id)

        def compute() -> Answer:
            req = self.request(
                TemplateId.INFERENCE_ANSWER,
                {
                    "task": task,
                    "question": question,
                    "sample_json": sample_json(sample),
                },
                params=DecodingParams(temperature=0.0, max_tokens=8),
            )
            resp = self.complete(req)
            if not resp.ok:
                return Answer(Verdict.UNKNOWN, f"[error] {resp.error}")
            return parse_answer(resp.text)

        answer, _ = self.cache.get_or_compute(key, compute)
        return answer


# ---------------------------------------------------------------------------
# Default scripted mock: a ground-truth oracle over the record's features
# ---------------------------------------------------------------------------

_EQ_Q = re.compile(r"^is\s+(\w+)\s+equal\s+to\s+'([^']*)'\s*\??$", re.IGNORECASE)
_MENTION_Q = re.compile(r"^does\s+(\w+)\s+mention\s+'([^']*)'\s*\??$", re.IGNORECASE)
_ATLEAST_Q = re.compile(
    r"^is\s+(\w+)\s+at\s+least\s+(-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)\s*\??$",
    re.IGNORECASE,
)


def _mock_inference_answer(request: LlmRequest) -> str:
    record = json.loads(str(request.bindings["sample_json"]))
    features = record.get("features", {})
    question = " ".join(str(request.bindings["question"]).split())
    m = _EQ_Q.match(question)
    if m:
        value = features.get(m.group(1))
        if value is None:
            return "Unknown"
        return "Yes" if str(value) == m.group(2) else "No"
    m = _MENTION_Q.match(question)
    if m:
        value = features.get(m.group(1))
        if value is None:
            return "Unknown"
        return "Yes" if m.group(2).casefold() in str(value).casefold() else "No"
    m = _ATLEAST_Q.match(question)
    if m:
        value = features.get(m.group(1))
        if not isinstance(value, (int, float)):
            return "Unknown"
        return "Yes" if float(value) >= float(m.group(2)) else "No"
    return "Unknown"


def _mock_question_gen(request: LlmRequest) -> str:
    stats = json.loads(str(request.bindings["feature_stats_json"]))
    name = stats["feature"]
    max_q = int(str(request.bindings["max_questions"]))
    lines: list[str] = []
    if stats["kind"] == "categorical":
        cats = [c for c, _ in stats.get("categories", [])]
        budget = max_q - 1 if len(cats) >= 3 and max_q > 1 else max_q
        for cat in cats[:budget]:
            lines.append(f"INFERENCE | Is {name} equal to '{cat}'?")
        if len(cats) >= 3 and max_q > 1:
            lines.append(
                f"CLUSTERING | Which group of {name} values does the record fall in?"
            )
    elif stats["kind"] == "numeric":
        for i, t in enumerate(stats.get("thresholds", [])[:max_q]):
            if i % 2 == 0:
                lines.append(f"INFERENCE | Is {name} at least {t!r}?")
            else:
                lines.append(f"CODE | Is {name} >= {t!r}? | {name} >= {t!r}")
    else:
        for i, (tok, _) in enumerate(stats.get("top_tokens", [])[:max_q]):
            if i % 2 == 0:
                lines.append(f"INFERENCE | Does {name} mention '{tok}'?")
            else:
                lines.append(f"CODE | Text of {name} contains '{tok}' | {name} contains '{tok}'")
    return "\n".join(lines)


def _mock_insight_batch(request: LlmRequest) -> str:
    records = json.loads(str(request.bindings["samples_json"]))
    tallies: dict[str, dict[str, int]] = {}
    for record in records:
        for fname, value in record.get("features", {}).items():
            if value is None:
                continue
            bucket = tallies.setdefault(fname, {})
            key = str(value)[:40]
            bucket[key] = bucket.get(key, 0) + 1
    lines = []
    for fname in sorted(tallies):
        value, count = max(tallies[fname].items(), key=lambda kv: (kv[1], kv[0]))
        lines.append(f"{fname} is often {value!r} ({count}/{len(records)})")
    return "\n".join(lines)


def _mock_insight_synthesis(request: LlmRequest) -> str:
    seen = []
    for line in str(request.bindings["summaries"]).splitlines():
        line = line.strip()
        if line and line not in seen:
            seen.append(line)
    return "\n".join(seen)


def _mock_category_group(request: LlmRequest) -> str:
    cats = json.loads(str(request.bindings["categories_json"]))
    max_groups = int(str(request.bindings["max_groups"]))
    chunks: list[list[str]] = [[] for _ in range(min(max_groups, len(cats)))]
    for i, cat in enumerate(cats):
        chunks[i * len(chunks) // len(cats)].append(cat)
    lines = []
    for chunk in chunks:
        label = "+".join(chunk)
        for cat in chunk:
            lines.append(f"{cat} -> {label}")
    return "\n".join(lines)


def default_mock_backend(latency: float = 0.0) -> MockBackend:
    """A mock whose rules read the structured payloads embedded in prompts.

    Question answers are truthful with respect to the record's features, so
    planted-rule datasets are recoverable without any network access.
    """
    return MockBackend(
        handlers={
            TemplateId.TASK_CONTEXT: lambda r: f"Acknowledged: {r.bindings['task']}",
            TemplateId.INSIGHT_BATCH: _mock_insight_batch,
            TemplateId.INSIGHT_SYNTHESIS: _mock_insight_synthesis,
            TemplateId.QUESTION_GEN: _mock_question_gen,
            TemplateId.INFERENCE_ANSWER: _mock_inference_answer,
            TemplateId.CATEGORY_GROUP: _mock_category_group,
            TemplateId.VANILLA_BASELINE: lambda r: "No",
            TemplateId.FEWSHOT_BASELINE: lambda r: "No",
            TemplateId.REBUILD_ADVICE: lambda r: str(r.bindings["advice"]),
        },
        latency=latency,
    )
