"""Model endpoint transport: chat-completions over HTTP, plus a
deterministic scripted mock selected with ``base_url = "mock:<path>"``.

Retries happen entirely inside this layer; callers only ever see a
completion or a terminal error, never a transient one.
"""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional

import requests

ROLES = ("reasoner", "worker", "prover")

RETRYABLE_STATUS = (429, 500, 502, 503, 504)

BACKOFF_INITIAL_S = 0.5


class ClientError(Exception):
    pass


class EndpointUnavailableError(ClientError):
    """All retries exhausted, or the mock script ran dry."""


class MalformedResponseError(ClientError):
    """The endpoint answered 200 with an unusable body."""


@dataclass(frozen=True)
class EndpointConfig:
    role: str
    base_url: str
    model: str = ""
    temperature: float = 0.7
    top_p: float = 1.0
    max_tokens: int = 4096
    timeout_s: float = 120.0
    max_retries: int = 3
    max_concurrency: int = 8

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown endpoint role {self.role!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")

    @property
    def is_mock(self) -> bool:
        return self.base_url.startswith("mock:")


@dataclass(frozen=True)
class Completion:
    text: str
    latency_s: float


class ModelClient:
    def complete(self, messages: List[dict], tag: Optional[str] = None) -> Completion:
        """messages is chat-completions shaped; tag routes mock scripts."""
        raise NotImplementedError

    @property
    def call_count(self) -> int:
        raise NotImplementedError


class HttpClient(ModelClient):
    def __init__(self, config: EndpointConfig, session: Optional[requests.Session] = None):
        self.config = config
        self._session = session or requests.Session()
        self._gate = threading.Semaphore(config.max_concurrency)
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return self._calls

    def complete(self, messages, tag=None):
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        payload = {
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "max_tokens": self.config.max_tokens,
        }
        delay = BACKOFF_INITIAL_S
        last_error = "no attempt made"
        for _ in range(self.config.max_retries + 1):
            with self._gate:
                with self._lock:
                    self._calls += 1
                start = time.monotonic()
                try:
                    resp = self._session.post(
                        url, json=payload, timeout=self.config.timeout_s
                    )
                except requests.RequestException as exc:
                    last_error = f"transport: {exc}"
                else:
                    if resp.status_code == 200:
                        return Completion(
                            text=self._first_choice(resp),
                            latency_s=time.monotonic() - start,
                        )
                    if resp.status_code not in RETRYABLE_STATUS:
                        raise EndpointUnavailableError(
                            f"{self.config.role} endpoint returned HTTP"
                            f" {resp.status_code}"
                        )
                    last_error = f"HTTP {resp.status_code}"
            time.sleep(delay)
            delay *= 2
        raise EndpointUnavailableError(
            f"{self.config.role} endpoint unavailable after"
            f" {self.config.max_retries + 1} tries ({last_error})"
        )

    @staticmethod
    def _first_choice(resp) -> str:
        try:
            data = resp.json()
        except ValueError as exc:
            raise MalformedResponseError(f"response is not JSON: {exc}") from exc
        try:
            choice = data["choices"][0]
            if "message" in choice:
                return choice["message"]["content"]
            return choice["text"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(
                f"response missing choices: {json.dumps(data)[:200]}"
            ) from exc


class MockClient(ModelClient):
    """Replays a script file: one JSON object per line.

    Each entry needs a ``content`` string and may carry ``latency_s``
    (reported as the call's latency), ``error`` (the call raises instead
    of answering), and ``theorem``.  Entries tagged with a theorem go to
    a per-theorem queue consumed only by calls carrying that tag, which
    keeps scripts meaningful when many pipelines interleave; untagged
    entries form a shared queue consumed in order.
    """

    def __init__(self, config: EndpointConfig):
        self.config = config
        path = config.base_url[len("mock:") :]
        self.script_path = path
        self._global: deque = deque()
        self._tagged: Dict[str, deque] = {}
        self._lock = threading.Lock()
        self._calls = 0
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: bad JSON ({exc})") from exc
                if "theorem" in entry:
                    self._tagged.setdefault(entry["theorem"], deque()).append(entry)
                else:
                    self._global.append(entry)

    @property
    def call_count(self) -> int:
        return self._calls

    def remaining(self) -> int:
        return len(self._global) + sum(len(q) for q in self._tagged.values())

    def complete(self, messages, tag=None):
        with self._lock:
            self._calls += 1
            queue = None
            if tag is not None and self._tagged.get(tag):
                queue = self._tagged[tag]
            elif self._global:
                queue = self._global
            if queue is None:
                raise EndpointUnavailableError(
                    f"mock script {self.script_path} exhausted"
                    + (f" for theorem {tag!r}" if tag else "")
                )
            entry = queue.popleft()
        if "error" in entry:
            raise EndpointUnavailableError(
                f"scripted failure: {entry['error']}"
            )
        return Completion(
            text=entry.get("content", ""),
            latency_s=float(entry.get("latency_s", 0.0)),
        )


def make_client(config: EndpointConfig) -> ModelClient:
    if config.is_mock:
        return MockClient(config)
    return HttpClient(config)
