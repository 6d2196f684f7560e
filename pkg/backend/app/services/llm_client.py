from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import requests

from .errors import CassetteMiss, EndpointError, MalformedDocument


logger = logging.getLogger(__name__)


def load_env_file() -> Optional[str]:
    """Load the nearest .env from the working directory upward. Variables already set win."""
    try:
        from dotenv import find_dotenv, load_dotenv  # type: ignore
    except ImportError:
        return None
    path = find_dotenv(usecwd=True)
    if path:
        load_dotenv(path)
    return path or None


load_env_file()

# Provider: OpenAI-compatible chat completions (DeepSeek, OpenAI, Groq, Together, OpenRouter, vLLM)
API_KEY_ENV = "SAR_NARRATOR_API_KEY"
DEFAULT_BASE_URL = os.getenv("SAR_NARRATOR_BASE_URL", "https://api.deepseek.com/v1").rstrip("/")
DEFAULT_MODEL = os.getenv("SAR_NARRATOR_MODEL", "deepseek-chat")

MODES = ("live", "replay")

Transport = Callable[[Dict[str, Any]], str]


def request_payload(prompt: str, model: str, temperature: float = 0.0) -> Dict[str, Any]:
    return {
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": temperature,
    }


def request_sha256(payload: Dict[str, Any]) -> str:
    """Cassette key: sha256 of the canonical JSON of {model, messages, temperature}."""
    body = {k: payload[k] for k in ("model", "messages", "temperature")}
    blob = json.dumps(body, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def extract_content(data: Dict[str, Any]) -> Optional[str]:
    choice = (data.get("choices") or [{}])[0]
    content = (choice.get("message") or {}).get("content")
    # Fallbacks for some "compatible" providers
    if not content:
        content = choice.get("text") or None
    if not content:
        content = data.get("output_text") or None
    return content


def http_transport(base_url: str = DEFAULT_BASE_URL, api_key: Optional[str] = None, timeout: int = 60) -> Transport:
    url = f"{base_url.rstrip('/')}/chat/completions"

    def post(payload: Dict[str, Any]) -> str:
        key = api_key or os.getenv(API_KEY_ENV)
        if not key:
            raise EndpointError(f"{API_KEY_ENV} not set")
        headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        try:
            r = requests.post(url, json=payload, headers=headers, timeout=(10, timeout))
        except requests.RequestException as e:
            raise EndpointError(f"transport error: {e}") from e
        if not r.ok:
            raise EndpointError(f"HTTP {r.status_code}: {r.text[:500]}")
        try:
            data = r.json()
        except ValueError as e:
            raise EndpointError(f"non-JSON response: {r.text[:500]}") from e
        return extract_content(data) or ""

    return post


class TokenBucket:
    """Blocking token bucket shared by every worker of one endpoint. rate <= 0 disables limiting."""

    def __init__(self, rate: float, capacity: Optional[float] = None,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        self.rate = float(rate)
        self.capacity = float(capacity if capacity is not None else max(1.0, rate))
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def _refill(self) -> None:
        now = self._clock()
        self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
        self._last = now

    def acquire(self) -> None:
        if self.rate <= 0:
            return
        while True:
            with self._lock:
                self._refill()
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


class Cassette:
    """Line-delimited {request_sha256, response_text} store. Reads are lock-free, appends serialized."""

    def __init__(self, path: Optional[str | Path]):
        self.path = Path(path) if path else None
        self._entries: Dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, "r", encoding="utf-8") as f:
                for lineno, line in enumerate(f, start=1):
                    if not line.strip():
                        continue
                    try:
                        rec = json.loads(line)
                        self._entries[rec["request_sha256"]] = rec["response_text"]
                    except (json.JSONDecodeError, KeyError, TypeError) as e:
                        raise MalformedDocument(f"cassette line {lineno}: {e}", self.path) from e

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> Optional[str]:
        return self._entries.get(key)

    def record(self, key: str, text: str) -> None:
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = text
            if self.path is None:
                return
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps({"request_sha256": key, "response_text": text}, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class Completion:
    text: str
    attempts: int
    cached: bool = False


class ChatEndpoint:
    """Chat-completions client with retries, shared rate limit, bounded concurrency and a cassette.

    live: call the transport and record into the cassette when one is configured.
    replay: answer from the cassette only; a miss raises CassetteMiss.
    """

    def __init__(
        self,
        model: str = DEFAULT_MODEL,
        mode: str = "replay",
        cassette: Optional[Cassette] = None,
        transport: Optional[Transport] = None,
        retries: int = 3,
        backoff_base: float = 0.5,
        max_concurrency: int = 4,
        rate_per_second: float = 0.0,
        temperature: float = 0.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if retries < 1:
            raise ValueError("retries must be >= 1")
        self.model = model
        self.mode = mode
        self.cassette = cassette if cassette is not None else Cassette(None)
        self.transport = transport
        self.retries = retries
        self.backoff_base = backoff_base
        self.temperature = temperature
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max(1, max_concurrency))
        self._bucket = TokenBucket(rate_per_second, sleep=sleep)

    def complete(self, prompt: str) -> Completion:
        payload = request_payload(prompt, self.model, self.temperature)
        key = request_sha256(payload)
        cached = self.cassette.get(key)
        if cached is not None:
            return Completion(text=cached, attempts=0, cached=True)
        if self.mode == "replay":
            raise CassetteMiss(f"no cassette entry for request {key[:12]}")
        text, attempts = self._call_with_retries(payload)
        if text.strip():
            self.cassette.record(key, text)
        return Completion(text=text, attempts=attempts)

    def _call_with_retries(self, payload: Dict[str, Any]) -> tuple[str, int]:
        transport = self.transport or http_transport()
        last: Optional[Exception] = None
        for attempt in range(self.retries):
            self._bucket.acquire()
            try:
                with self._slots:
                    return transport(payload), attempt + 1
            except Exception as e:
                last = e
                logger.warning("chat attempt=%d/%d failed error=%s", attempt + 1, self.retries, e)
                if attempt + 1 < self.retries:
                    self._sleep(self.backoff_base * (2 ** attempt))
        raise EndpointError(f"endpoint failed after {self.retries} attempts: {last}", attempts=self.retries)


def chat_probe(base_url: str = DEFAULT_BASE_URL, model: Optional[str] = None, timeout: int = 12) -> Dict[str, Any]:
    """Perform a minimal chat completion and return raw status + excerpt for debugging."""
    api_key = os.getenv(API_KEY_ENV)
    if not api_key:
        return {"ok": False, "status": None, "error": f"{API_KEY_ENV} not set"}
    model = model or DEFAULT_MODEL
    url = f"{base_url.rstrip('/')}/chat/completions"
    headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}
    payload = request_payload("ping", model)
    try:
        r = requests.post(url, json=payload, headers=headers, timeout=(10, timeout))
        excerpt = r.text[:2000]
        if not r.ok:
            return {"ok": False, "status": r.status_code, "error": excerpt}
        try:
            data = r.json()
        except ValueError:
            return {"ok": False, "status": r.status_code, "error": excerpt}
        return {"ok": True, "status": r.status_code, "content": extract_content(data)}
    except requests.RequestException as e:
        return {"ok": False, "status": None, "error": str(e)}


def llm_status(base_url: str = DEFAULT_BASE_URL, model: Optional[str] = None, timeout: int = 8) -> Dict[str, Any]:
    """Lightweight health check for the configured endpoint with error details."""
    model = model or DEFAULT_MODEL
    api_key = os.getenv(API_KEY_ENV)
    if not api_key or not api_key.strip():
        return {"ok": False, "base_url": base_url, "model": model, "error": f"{API_KEY_ENV} not set"}
    try:
        r = requests.get(f"{base_url.rstrip('/')}/models", headers={"Authorization": f"Bearer {api_key}"}, timeout=(5, timeout))
        if r.ok:
            return {"ok": True, "base_url": base_url, "model": model, "error": None}
        return {"ok": False, "base_url": base_url, "model": model, "error": f"HTTP {r.status_code}: {r.text}"}
    except requests.RequestException as e:
        return {"ok": False, "base_url": base_url, "model": model, "error": str(e)}
