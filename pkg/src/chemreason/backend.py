"""Chat-completion clients for the generator, reviewer and finalizer roles.

Two interchangeable clients expose ``complete(role, prompt) -> Completion``:
an OpenAI-compatible HTTP client for live runs and a scripted oracle that
replays canned texts for deterministic tests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import httpx

from .prompts import RenderedPrompt

logger = logging.getLogger(__name__)

ROLE_NAMES = ("generator", "reviewer", "finalizer")

RETRYABLE_STATUS = (429, 500, 502, 503, 504)


class BackendError(RuntimeError):
    """Base class for completion-backend failures."""


class ConfigurationError(BackendError):
    pass


class AuthenticationError(BackendError):
    pass


class ContextLengthError(BackendError):
    def __init__(self, message: str, prompt_chars: int):
        super().__init__(f"{message} (prompt size: {prompt_chars} chars)")
        self.prompt_chars = prompt_chars


class TransportError(BackendError):
    pass


class OracleExhaustedError(BackendError):
    pass


@dataclass(frozen=True)
class ModelRole:
    role: str  # generator | reviewer | finalizer
    model_name: str
    temperature: float = 0.0


@dataclass(frozen=True)
class Completion:
    """Raw model output, unmodified, plus usage metadata."""

    text: str
    role_used: ModelRole
    token_counts: dict | None = None
    latency_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "role": self.role_used.role,
            "model": self.role_used.model_name,
            "temperature": self.role_used.temperature,
            "token_counts": self.token_counts,
            "latency_s": self.latency_s,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Completion":
        return cls(
            data["text"],
            ModelRole(data["role"], data["model"], data.get("temperature", 0.0)),
            data.get("token_counts"),
            data.get("latency_s", 0.0),
        )


def configure_roles(config: Mapping[str, object]) -> dict[str, ModelRole]:
    """Build the role table from a role->settings map.

    A single entry (or a bare ``{"model": ...}`` map) aliases all three roles
    to the same model.  Temperatures default to 0.
    """
    if "model" in config and not any(role in config for role in ROLE_NAMES):
        config = {role: {"model": config["model"], "temperature": config.get("temperature", 0.0)} for role in ROLE_NAMES}
    entries = {role: config[role] for role in ROLE_NAMES if role in config}
    if not entries:
        raise ConfigurationError("no model configured for any role")
    default_entry = next(iter(entries.values()))
    table: dict[str, ModelRole] = {}
    for role in ROLE_NAMES:
        entry = entries.get(role, default_entry)
        if isinstance(entry, str):
            entry = {"model": entry}
        model = entry.get("model")
        if not model:
            raise ConfigurationError(f"role {role!r} has no model name")
        table[role] = ModelRole(role, str(model), float(entry.get("temperature", 0.0)))
    return table


def prompt_fingerprint(prompt: RenderedPrompt) -> str:
    """Stable hash of a rendered prompt, used to key scripted responses."""
    digest = hashlib.sha256()
    for role, text in prompt.messages:
        digest.update(role.encode())
        digest.update(b"\x00")
        digest.update(text.encode())
        digest.update(b"\x00")
    return digest.hexdigest()


def build_request_payload(role: ModelRole, prompt: RenderedPrompt) -> dict:
    """Pure function from (role, prompt) to the chat-completions request body."""
    return {
        "model": role.model_name,
        "temperature": role.temperature,
        "messages": [{"role": r, "content": text} for r, text in prompt.messages],
    }


class ScriptedOracle:
    """Deterministic test double replaying canned completion texts.

    Either an ordered queue of responses or a fingerprint->text map; a run
    that consumes more responses than scripted fails loudly instead of
    recycling.
    """

    def __init__(
        self,
        responses: Sequence[str] | None = None,
        by_fingerprint: Mapping[str, str] | None = None,
    ):
        if (responses is None) == (by_fingerprint is None):
            raise ConfigurationError("provide exactly one of responses / by_fingerprint")
        self._queue = list(responses) if responses is not None else None
        self._by_fingerprint = dict(by_fingerprint) if by_fingerprint is not None else None
        self._lock = threading.Lock()
        self.calls = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedOracle":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, list):
            return cls(responses=data)
        if isinstance(data, dict) and "responses" in data:
            return cls(responses=data["responses"])
        if isinstance(data, dict) and "by_fingerprint" in data:
            return cls(by_fingerprint=data["by_fingerprint"])
        raise ConfigurationError(
            f"{path}: expected a list, {{'responses': [...]}} or {{'by_fingerprint': {{...}}}}"
        )

    def complete(self, role: ModelRole, prompt: RenderedPrompt) -> Completion:
        with self._lock:
            self.calls += 1
            if self._queue is not None:
                if not self._queue:
                    raise OracleExhaustedError(
                        f"scripted oracle exhausted after {self.calls - 1} responses"
                    )
                text = self._queue.pop(0)
            else:
                key = prompt_fingerprint(prompt)
                if key not in self._by_fingerprint:  # type: ignore[operator]
                    raise OracleExhaustedError(f"no scripted response for fingerprint {key}")
                text = self._by_fingerprint[key]  # type: ignore[index]
        return Completion(text, role)


class HttpChatClient:
    """OpenAI-compatible chat-completions client with bounded retry.

    Retries only transient transport failures (timeouts, 429 and 5xx) with
    jittered exponential backoff; authentication and context-length errors
    surface immediately.  A shared semaphore bounds in-flight requests.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str = "OPENAI_API_KEY",
        timeout_s: float = 120.0,
        max_attempts: int = 3,
        backoff_s: float = 1.0,
        max_in_flight: int = 4,
        transport: httpx.BaseTransport | None = None,
        rng: random.Random | None = None,
    ):
        api_key = os.environ.get(api_key_env, "").strip()
        if not api_key:
            raise ConfigurationError(
                f"credential env var {api_key_env!r} is unset; cannot reach {base_url}"
            )
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"),
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=timeout_s,
            transport=transport,
        )
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self._semaphore = threading.Semaphore(max_in_flight)
        self._rng = rng or random.Random()

    def close(self) -> None:
        self._client.close()

    def _sleep_before_retry(self, attempt: int) -> None:
        delay = self.backoff_s * (2**attempt) * (1.0 + self._rng.random() * 0.25)
        time.sleep(delay)

    def complete(self, role: ModelRole, prompt: RenderedPrompt) -> Completion:
        payload = build_request_payload(role, prompt)
        prompt_chars = sum(len(text) for _, text in prompt.messages)
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            started = time.monotonic()
            try:
                with self._semaphore:
                    response = self._client.post("/chat/completions", json=payload)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last_error = exc
                logger.warning("attempt %d/%d failed: %r", attempt + 1, self.max_attempts, exc)
                if attempt + 1 < self.max_attempts:
                    self._sleep_before_retry(attempt)
                continue

            if response.status_code in (401, 403):
                raise AuthenticationError(f"authentication failed ({response.status_code})")
            if response.status_code == 400 and "context" in response.text.lower():
                raise ContextLengthError("context length exceeded", prompt_chars)
            if response.status_code in RETRYABLE_STATUS:
                last_error = TransportError(f"status {response.status_code}: {response.text[:200]}")
                logger.warning("attempt %d/%d got status %d", attempt + 1, self.max_attempts, response.status_code)
                if attempt + 1 < self.max_attempts:
                    self._sleep_before_retry(attempt)
                continue
            if response.status_code != 200:
                raise TransportError(f"status {response.status_code}: {response.text[:200]}")

            data = response.json()
            try:
                text = data["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed completion response: {exc}") from exc
            return Completion(
                text=text,
                role_used=role,
                token_counts=data.get("usage"),
                latency_s=time.monotonic() - started,
            )
        raise TransportError(f"gave up after {self.max_attempts} attempts: {last_error}")
