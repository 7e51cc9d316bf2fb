"""Language-model providers: a canned-response stub for tests and an HTTPS client."""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import requests

TRANSPORT_ERROR = "!transport-error"
RATE_LIMIT = "!rate-limit"


class ProviderError(RuntimeError):
    """Transport-level failure: the provider could not be reached or answered badly."""


class RateLimitError(ProviderError):
    def __init__(self, message: str = "rate limited", retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


@dataclass(frozen=True)
class ProviderRequest:
    prompt: str
    model: str
    temperature: float = 0.0
    max_tokens: int = 2048
    # routing metadata, never sent over the wire
    doi: str = ""
    template_id: str = ""


@dataclass(frozen=True)
class ProviderResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: float = 0.0
    provider: str = ""


class Provider(Protocol):
    name: str
    model: str

    def complete(self, request: ProviderRequest) -> ProviderResponse: ...


@dataclass
class StubProvider:
    """Serves canned answers keyed by ``(doi, template_id)``.

    A value may be a string or a list of strings served in order (the last
    repeats). ``"!transport-error"`` and ``"!rate-limit"`` raise the matching
    provider errors instead of answering. Missing keys raise ``ProviderError``.
    """

    responses: Mapping[str, Mapping[str, str | Sequence[str]]]
    model: str = "stub"
    name: str = "stub"
    calls: list[tuple[str, str]] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> "StubProvider":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")), **kwargs)

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        with self._lock:
            index = sum(1 for c in self.calls if c == (request.doi, request.template_id))
            self.calls.append((request.doi, request.template_id))
        canned = self.responses.get(request.doi, {}).get(request.template_id)
        if canned is None:
            raise ProviderError(f"stub has no response for {request.doi} / {request.template_id}")
        if not isinstance(canned, str):
            canned = canned[min(index, len(canned) - 1)]
        if canned == TRANSPORT_ERROR:
            raise ProviderError("stub transport failure")
        if canned == RATE_LIMIT:
            raise RateLimitError("stub rate limit")
        return ProviderResponse(text=canned, provider=self.name)


@dataclass
class LiveProvider:
    """HTTPS JSON client for a generateContent-style endpoint.

    The API key is read from the environment variable named by ``api_key_env``.
    """

    model: str = "gemini-2.5-flash-lite"
    base_url: str = "https://generativelanguage.googleapis.com/v1beta"
    api_key_env: str = "OSMETER_API_KEY"
    timeout: float = 120.0
    name: str = "live"
    session: requests.Session = field(default_factory=requests.Session, repr=False)

    def _api_key(self) -> str:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise ProviderError(f"environment variable {self.api_key_env} is not set")
        return key

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        url = f"{self.base_url.rstrip('/')}/models/{request.model or self.model}:generateContent"
        body = {
            "contents": [{"role": "user", "parts": [{"text": request.prompt}]}],
            "generationConfig": {
                "temperature": request.temperature,
                "maxOutputTokens": request.max_tokens,
                "responseMimeType": "application/json",
            },
        }
        started = time.perf_counter()
        try:
            resp = self.session.post(url, json=body, timeout=self.timeout,
                                     headers={"x-goog-api-key": self._api_key()})
        except requests.exceptions.RequestException as exc:
            raise ProviderError(f"request failed: {exc}") from exc
        latency = (time.perf_counter() - started) * 1000.0
        if resp.status_code == 429:
            retry_after = resp.headers.get("Retry-After")
            raise RateLimitError("provider returned 429",
                                 float(retry_after) if retry_after and retry_after.isdigit() else None)
        if resp.status_code >= 400:
            raise ProviderError(f"provider returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            parts = payload["candidates"][0]["content"]["parts"]
            text = "".join(p.get("text", "") for p in parts)
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected response body: {exc}") from exc
        if not text.strip():
            raise ProviderError("provider returned empty text")
        usage = payload.get("usageMetadata", {})
        return ProviderResponse(
            text=text,
            prompt_tokens=int(usage.get("promptTokenCount", 0)),
            completion_tokens=int(usage.get("candidatesTokenCount", 0)),
            latency_ms=latency,
            provider=self.name,
        )


class RateLimiter:
    """Spaces calls at least ``60 / requests_per_minute`` seconds apart across threads."""

    def __init__(self, requests_per_minute: float | None, clock=time.monotonic, sleep=time.sleep):
        self.interval = 60.0 / requests_per_minute if requests_per_minute else 0.0
        self._clock = clock
        self._sleep = sleep
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = self._clock()
            start = max(now, self._next)
            self._next = start + self.interval
        if start > now:
            self._sleep(start - now)
