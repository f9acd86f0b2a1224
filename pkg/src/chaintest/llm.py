"""Chat-completion gateway with retries, throttling and token accounting.

Two providers are built in: ``HttpProvider`` for OpenAI-style chat endpoints
and ``MockProvider`` which replays a script, so every pipeline run can be
made fully deterministic offline.
"""

from __future__ import annotations

import fnmatch
import json
import logging
import math
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import httpx

from .errors import (
    BudgetExhausted,
    EmptyExtraction,
    MalformedResponse,
    ProviderUnavailable,
    TransientProviderError,
)

log = logging.getLogger(__name__)

GENERATION_TEMPERATURE = 0.2
REPAIR_TEMPERATURE = 0.0
DEFAULT_API_KEY_ENV = "PALM_API_KEY"


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    max_output_tokens: int = 1024
    temperature: float = GENERATION_TEMPERATURE
    request_tag: str = ""

    def __post_init__(self):
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must lie in [0, 2]")

    def estimated_input_tokens(self) -> int:
        return math.ceil((len(self.system) + len(self.user)) / 4)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    input_tokens: int
    output_tokens: int
    provider_id: str


# ---------------------------------------------------------------------------
# providers


@dataclass
class ScriptEntry:
    match_tag: str
    respond: str
    fail_times: int = 0
    times: Optional[int] = None  # uses before the entry is exhausted; None = unlimited


class MockProvider:
    """Replays a scripted list of responses.

    The first non-exhausted entry whose ``match_tag`` glob matches the
    request tag answers. An entry fails transiently ``fail_times`` times
    before it starts responding.
    """

    provider_id = "mock"

    def __init__(self, entries):
        self.entries = [e if isinstance(e, ScriptEntry) else ScriptEntry(**e) for e in entries]
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def __call__(self, req: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
            for entry in self.entries:
                if entry.times is not None and entry.times <= 0:
                    continue
                if not fnmatch.fnmatchcase(req.request_tag, entry.match_tag):
                    continue
                if entry.fail_times > 0:
                    entry.fail_times -= 1
                    raise TransientProviderError(f"scripted failure for {req.request_tag!r}")
                if entry.times is not None:
                    entry.times -= 1
                return ChatResponse(
                    text=entry.respond,
                    input_tokens=req.estimated_input_tokens(),
                    output_tokens=math.ceil(len(entry.respond) / 4),
                    provider_id=self.provider_id,
                )
        raise MalformedResponse(f"mock script has no entry for tag {req.request_tag!r}")


class HttpProvider:
    """OpenAI-compatible ``/chat/completions`` client."""

    def __init__(self, endpoint, model, api_key=None, timeout=120.0, client=None):
        self.endpoint = endpoint
        self.model = model
        self.provider_id = f"http:{model}"
        self._api_key = api_key
        self._client = client or httpx.Client(timeout=timeout)

    def __call__(self, req: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "max_tokens": req.max_output_tokens,
            "temperature": req.temperature,
        }
        try:
            resp = self._client.post(self.endpoint, json=payload, headers=headers)
        except httpx.TransportError as exc:
            raise TransientProviderError(f"transport error: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientProviderError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
            usage = data.get("usage") or {}
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected response body: {resp.text[:200]}") from exc
        if not isinstance(text, str):
            raise MalformedResponse("response content is not text")
        return ChatResponse(
            text=text,
            input_tokens=int(usage.get("prompt_tokens", req.estimated_input_tokens())),
            output_tokens=int(usage.get("completion_tokens", math.ceil(len(text) / 4))),
            provider_id=self.provider_id,
        )


# ---------------------------------------------------------------------------
# gateway


class RateLimiter:
    """Sliding one-minute window on request starts."""

    def __init__(self, rpm: Optional[int], clock=time.monotonic, sleep=time.sleep):
        self.rpm = rpm
        self.clock = clock
        self.sleep = sleep
        self._starts: deque = deque()
        self._lock = threading.Lock()

    def acquire(self):
        if not self.rpm:
            return
        while True:
            with self._lock:
                now = self.clock()
                while self._starts and now - self._starts[0] >= 60.0:
                    self._starts.popleft()
                if len(self._starts) < self.rpm:
                    self._starts.append(now)
                    return
                wait = 60.0 - (now - self._starts[0])
            self.sleep(wait)


@dataclass(frozen=True)
class RequestRecord:
    tag: str
    attempts: int
    input_tokens: int
    output_tokens: int


@dataclass
class Gateway:
    provider: Callable[[ChatRequest], ChatResponse]
    rpm: Optional[int] = None
    max_concurrent: int = 4
    token_budget: Optional[int] = None
    max_attempts: int = 5
    backoff_base: float = 1.0
    backoff_factor: float = 2.0
    sleep: Callable[[float], None] = time.sleep
    records: list = field(default_factory=list)

    def __post_init__(self):
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(max(1, self.max_concurrent))
        self._limiter = RateLimiter(self.rpm, sleep=self.sleep)
        self._used = 0

    @property
    def tokens_used(self) -> int:
        return self._used

    def totals(self) -> tuple[int, int]:
        with self._lock:
            return (sum(r.input_tokens for r in self.records), sum(r.output_tokens for r in self.records))

    def complete(self, req: ChatRequest) -> ChatResponse:
        with self._lock:
            if self.token_budget is not None and self._used + req.estimated_input_tokens() > self.token_budget:
                raise BudgetExhausted(
                    f"request {req.request_tag!r} needs ~{req.estimated_input_tokens()} tokens, "
                    f"{self.token_budget - self._used} left")
        attempt = 0
        while True:
            attempt += 1
            self._limiter.acquire()
            try:
                with self._slots:
                    resp = self.provider(req)
            except TransientProviderError as exc:
                if attempt >= self.max_attempts:
                    raise ProviderUnavailable(f"{req.request_tag}: gave up after {attempt} attempts: {exc}") from exc
                delay = self.backoff_base * self.backoff_factor ** (attempt - 1)
                log.warning("transient failure on %s (attempt %d), retrying in %.1fs", req.request_tag, attempt, delay)
                self.sleep(delay)
                continue
            if resp.input_tokens < 0 or resp.output_tokens < 0:
                raise MalformedResponse("negative token counts")
            with self._lock:
                self._used += resp.input_tokens + resp.output_tokens
                self.records.append(RequestRecord(req.request_tag, attempt, resp.input_tokens, resp.output_tokens))
            return resp


def provider_from_config(cfg: dict, mock_script=None):
    kind = "mock" if mock_script else cfg.get("provider", "mock")
    if kind == "mock":
        path = mock_script or cfg.get("mock_script")
        if not path:
            raise ValueError("mock provider needs a script (--mock-script or provider.mock_script)")
        return MockProvider.from_file(path)
    if kind == "http":
        env = cfg.get("api_key_env") or DEFAULT_API_KEY_ENV
        return HttpProvider(cfg["endpoint"], cfg["model"], api_key=os.environ.get(env))
    raise ValueError(f"unknown provider {kind!r}")


def gateway_from_config(cfg: dict, mock_script=None, sleep=time.sleep) -> Gateway:
    return Gateway(
        provider=provider_from_config(cfg, mock_script),
        rpm=cfg.get("rpm"),
        max_concurrent=cfg.get("max_concurrent", 4),
        token_budget=cfg.get("token_budget"),
        sleep=sleep,
    )


# ---------------------------------------------------------------------------
# response post-processing

_FENCE = re.compile(r"```[^\n`]*\n(.*?)```", re.S)
_CODE_HINT = re.compile(r"\bfn\b|[{};]|#\[")


def extract_code(text: str) -> str:
    """Code from a model reply: fenced blocks joined in order, else the trimmed text.

    Unfenced replies with no code-like token at all are treated as prose.
    """
    blocks = [b.strip("\n") for b in _FENCE.findall(text)]
    code = "\n\n".join(b for b in blocks if b.strip()) if blocks else text.strip()
    if not code.strip() or (not blocks and not _CODE_HINT.search(code)):
        raise EmptyExtraction("response contains no code")
    return code
