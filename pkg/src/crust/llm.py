"""Chat backends, prompt construction, and code extraction.

Two backend kinds exist behind one interface: an HTTP chat endpoint (JSON
wire format: model/temperature/messages out, choices+usage back) and a
scripted mock that replays canned responses for offline runs and tests.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass

import requests

from .errors import ConfigError, LlmApiError

log = logging.getLogger(__name__)

TRANSLATION_PREFIX = (
    "Translate the following C code to Rust. Keep all identifiers exactly as they are. "
)
FEEDBACK_PREFIX = "You made the following mistakes: "

DEFAULT_FEEDBACK_BYTE_CAP = 16 * 1024


@dataclass
class ChatMessage:
    role: str  # "system" | "user" | "assistant"
    content: str


class Conversation:
    """Message list enforcing user/assistant alternation after an optional system prompt."""

    def __init__(self, system: str | None = None):
        self.messages: list[ChatMessage] = []
        if system is not None:
            self.messages.append(ChatMessage("system", system))

    def _last_role(self) -> str | None:
        for m in reversed(self.messages):
            if m.role != "system":
                return m.role
        return None

    def add_user(self, content: str) -> None:
        if self._last_role() == "user":
            raise ValueError("consecutive user messages")
        self.messages.append(ChatMessage("user", content))

    def add_assistant(self, content: str) -> None:
        if self._last_role() != "user":
            raise ValueError("assistant message must follow a user message")
        self.messages.append(ChatMessage("assistant", content))

    def to_wire(self) -> list[dict[str, str]]:
        return [{"role": m.role, "content": m.content} for m in self.messages]

    def last_user(self) -> str:
        for m in reversed(self.messages):
            if m.role == "user":
                return m.content
        return ""


@dataclass
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    reasoning_tokens: int = 0

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens + self.reasoning_tokens

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
            self.reasoning_tokens + other.reasoning_tokens,
        )


@dataclass
class BackendConfig:
    name: str
    kind: str  # "http-chat" | "scripted-mock"
    model: str = ""
    temperature: float = 0.7
    endpoint: str = ""
    credential_env: str = ""
    timeout_s: float = 120.0
    max_retries: int = 3
    retry_base_delay_s: float = 0.5
    rate_limit_per_s: float = 0.0
    script_path: str = ""

    @property
    def offline(self) -> bool:
        return self.kind == "scripted-mock"


def build_translation_prompt(c_code: str) -> str:
    return TRANSLATION_PREFIX + c_code


def build_feedback_prompt(
    diagnostics: str | list[str], byte_cap: int = DEFAULT_FEEDBACK_BYTE_CAP
) -> str:
    """Feedback turn: verbatim diagnostics, first errors kept under the cap."""
    body = diagnostics if isinstance(diagnostics, str) else "\n".join(diagnostics)
    raw = body.encode("utf-8")
    if len(raw) > byte_cap:
        body = raw[:byte_cap].decode("utf-8", errors="ignore") + "\n[diagnostics truncated]"
    return FEEDBACK_PREFIX + body


_FENCE_RE = re.compile(r"```([A-Za-z0-9_+-]*)[ \t]*\r?\n(.*?)```", re.DOTALL)


def extract_code(response: str) -> tuple[str, str]:
    """Pull code out of a chat response.

    Preference order: longest ```rust fence, longest fence of any language,
    whole response body. Returns (code, confidence) with confidence "fenced"
    or "unfenced".
    """
    fences = [(m.group(1).lower(), m.group(2)) for m in _FENCE_RE.finditer(response)]
    rust = [body for lang, body in fences if lang in ("rust", "rs")]
    if rust:
        return max(rust, key=len), "fenced"
    if fences:
        return max((body for _, body in fences), key=len), "fenced"
    return response.strip(), "unfenced"


class Backend:
    """Interface: complete(conversation) -> (assistant_text, TokenUsage)."""

    config: BackendConfig

    def complete(self, conversation: Conversation) -> tuple[str, TokenUsage]:
        raise NotImplementedError


class HttpChatBackend(Backend):
    """POSTs OpenAI-style chat completion requests to config.endpoint.

    Retries transport-level failures (connection errors, timeouts, 429, 5xx)
    with exponential backoff. Authentication and content-filter refusals are
    not retried; they surface as LlmApiError.
    """

    def __init__(self, config: BackendConfig, session: requests.Session | None = None):
        if not config.endpoint:
            raise ConfigError(f"backend {config.name}: http-chat needs an endpoint")
        self.config = config
        self.session = session or requests.Session()
        self._lock = threading.Lock()
        self._last_call = 0.0

    def _throttle(self) -> None:
        if self.config.rate_limit_per_s <= 0:
            return
        gap = 1.0 / self.config.rate_limit_per_s
        with self._lock:
            now = time.monotonic()
            wait = self._last_call + gap - now
            if wait > 0:
                time.sleep(wait)
            self._last_call = time.monotonic()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.credential_env:
            key = os.environ.get(self.config.credential_env, "")
            if not key:
                raise ConfigError(
                    f"backend {self.config.name}: environment variable "
                    f"{self.config.credential_env} is not set"
                )
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, conversation: Conversation) -> tuple[str, TokenUsage]:
        body = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": conversation.to_wire(),
        }
        headers = self._headers()
        last_exc: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.config.retry_base_delay_s * (2 ** (attempt - 1)))
            self._throttle()
            try:
                resp = self.session.post(
                    self.config.endpoint,
                    json=body,
                    headers=headers,
                    timeout=self.config.timeout_s,
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                log.warning("backend %s transport error (attempt %d): %s", self.config.name, attempt + 1, exc)
                continue
            if resp.status_code in (429,) or resp.status_code >= 500:
                last_exc = LlmApiError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                log.warning("backend %s HTTP %d (attempt %d)", self.config.name, resp.status_code, attempt + 1)
                continue
            if resp.status_code in (401, 403):
                raise LlmApiError(f"authentication failed (HTTP {resp.status_code})")
            if resp.status_code == 400 and "content_filter" in resp.text:
                raise LlmApiError("request rejected by content filter", content_filtered=True)
            if resp.status_code != 200:
                raise LlmApiError(f"HTTP {resp.status_code}: {resp.text[:500]}")
            return self._parse(resp)
        raise LlmApiError(f"transport failed after {self.config.max_retries + 1} attempts: {last_exc}")

    def _parse(self, resp: requests.Response) -> tuple[str, TokenUsage]:
        try:
            data = resp.json()
            choice = data["choices"][0]
        except (ValueError, KeyError, IndexError) as exc:
            raise LlmApiError(f"malformed completion response: {exc}") from exc
        if choice.get("finish_reason") == "content_filter":
            raise LlmApiError("completion stopped by content filter", content_filtered=True)
        text = (choice.get("message") or {}).get("content") or ""
        usage = data.get("usage") or {}
        details = usage.get("completion_tokens_details") or {}
        return text, TokenUsage(
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            reasoning_tokens=int(details.get("reasoning_tokens", 0)),
        )


class ScriptedBackend(Backend):
    """Replays scripted responses; the offline stand-in for a chat model.

    Script JSON is a list (or {"responses": [...]}) of entries:
      {"match": "substring", "response": "...", "usage": {...}, "error": "..."}
    Selection is a pure function of the conversation, so runs are repeatable
    regardless of worker count or ordering: entries whose "match" occurs in
    some user message (entries without "match" always qualify) are indexed by
    the number of assistant turns already in the conversation, clamped to the
    last qualifying entry. A two-entry script therefore replays "broken, then
    fixed, then fixed forever" for every run of the same source.
    "error": "content_filter" raises the corresponding refusal.
    """

    def __init__(self, config: BackendConfig, entries: list[dict] | None = None):
        self.config = config
        if entries is None:
            if not config.script_path:
                raise ConfigError(f"backend {config.name}: scripted-mock needs script_path")
            with open(config.script_path, encoding="utf-8") as f:
                data = json.load(f)
            entries = data["responses"] if isinstance(data, dict) else data
        self.entries = [dict(e) for e in entries]

    def complete(self, conversation: Conversation) -> tuple[str, TokenUsage]:
        prompt = conversation.last_user()
        user_text = "\n".join(m.content for m in conversation.messages if m.role == "user")
        turn = sum(1 for m in conversation.messages if m.role == "assistant")
        matching = [
            e for e in self.entries if "match" not in e or e["match"] in user_text
        ]
        if not matching:
            raise LlmApiError(
                f"backend {self.config.name}: no scripted response matches the request "
                f"({len(self.entries)} entries)"
            )
        entry = matching[min(turn, len(matching) - 1)]
        if entry.get("error") == "content_filter":
            raise LlmApiError("completion stopped by content filter", content_filtered=True)
        if entry.get("error"):
            raise LlmApiError(str(entry["error"]))
        text = entry.get("response", "")
        u = entry.get("usage") or {}
        usage = TokenUsage(
            prompt_tokens=int(u.get("prompt_tokens", len(prompt) // 4)),
            completion_tokens=int(u.get("completion_tokens", len(text) // 4)),
            reasoning_tokens=int(u.get("reasoning_tokens", 0)),
        )
        return text, usage


def make_backend(config: BackendConfig, session: requests.Session | None = None) -> Backend:
    if config.kind == "http-chat":
        return HttpChatBackend(config, session=session)
    if config.kind == "scripted-mock":
        return ScriptedBackend(config)
    raise ConfigError(f"unknown backend kind: {config.kind!r}")


def complete(backend: Backend, conversation: Conversation) -> tuple[str, TokenUsage]:
    """Functional entry point mirroring Backend.complete."""
    return backend.complete(conversation)
