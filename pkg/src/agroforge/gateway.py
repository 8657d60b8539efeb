"""Single point of access to chat-completion endpoints.

Speaks the OpenAI-compatible chat-completions POST body so both local servers
and hosted models work. Adds bounded-concurrency batching, exponential-backoff
retries on transient failures, a deterministic on-disk response cache keyed by
the full request, and a scripted mock backend so the whole pipeline runs
offline.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import random
import re
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import requests

from .errors import BackendUnavailable, ImageUnsupported, InvalidRequest

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    text: str
    image: str | None = None


@dataclass(frozen=True)
class ChatRequest:
    backend_id: str
    model_name: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.2
    max_tokens: int = 512
    # feeds the cache key but never the wire payload; lets content-level
    # retries miss the cache instead of replaying a bad cached reply
    cache_salt: str = ""


@dataclass(frozen=True)
class ChatResponse:
    text: str
    finish_reason: str = "stop"
    token_usage: dict[str, int] = field(default_factory=dict)
    cache_hit: bool = False
    retries: int = 0


def validate_request(request: ChatRequest) -> None:
    if not request.messages:
        raise InvalidRequest("request has no messages")
    for index, message in enumerate(request.messages):
        if message.role not in ROLES:
            raise InvalidRequest(f"message {index} has unknown role {message.role!r}")
        if message.role == "system" and index != 0:
            raise InvalidRequest("system message must be first and unique")
        if message.image is not None and message.role != "user":
            raise InvalidRequest("image references may only appear in user messages")
    if request.temperature < 0:
        raise InvalidRequest(f"temperature must be >= 0, got {request.temperature}")
    if request.max_tokens < 1:
        raise InvalidRequest(f"max_tokens must be positive, got {request.max_tokens}")


def _image_fingerprint(reference: str) -> str:
    """Digest of the image content when the reference is a readable file,
    otherwise the reference string itself."""
    path = Path(reference)
    try:
        if path.is_file():
            return "sha256:" + hashlib.sha256(path.read_bytes()).hexdigest()
    except OSError:
        pass
    return "ref:" + reference


def cache_key(request: ChatRequest) -> str:
    """Stable digest of every request field, image content included. Equal
    requests produce equal keys; any field change changes the key."""
    payload = {
        "backend_id": request.backend_id,
        "model_name": request.model_name,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
        "cache_salt": request.cache_salt,
        "messages": [
            {
                "role": m.role,
                "text": m.text,
                "image": _image_fingerprint(m.image) if m.image is not None else None,
            }
            for m in request.messages
        ],
    }
    encoded = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(encoded).hexdigest()


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay_ms: int = 250


@dataclass(frozen=True)
class BackendConfig:
    backend_id: str
    kind: str = "http"  # http | mock
    base_url: str = ""
    model_name: str = ""
    vision_capable: bool = False
    auth_env_var: str = ""
    max_in_flight: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    timeout_s: float = 120.0
    # mock only
    transcript_path: str = ""
    synthesize_fallback: bool = True

    @classmethod
    def from_dict(cls, data: dict) -> "BackendConfig":
        retry = data.get("retry", {})
        return cls(
            backend_id=data["backend_id"],
            kind=data.get("kind", "http"),
            base_url=data.get("base_url", ""),
            model_name=data.get("model_name", ""),
            vision_capable=bool(data.get("vision_capable", False)),
            auth_env_var=data.get("auth_env_var", ""),
            max_in_flight=int(data.get("max_in_flight", 4)),
            retry=RetryPolicy(
                max_attempts=int(retry.get("max_attempts", 3)),
                base_delay_ms=int(retry.get("base_delay_ms", 250)),
            ),
            timeout_s=float(data.get("timeout_s", 120.0)),
            transcript_path=data.get("transcript_path", ""),
            synthesize_fallback=bool(data.get("synthesize_fallback", True)),
        )


def load_backend_configs(path: str | Path) -> dict[str, BackendConfig]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict) and "backends" in data:
        data = data["backends"]
    if isinstance(data, dict):
        data = [data]
    configs = {}
    for entry in data:
        config = BackendConfig.from_dict(entry)
        configs[config.backend_id] = config
    return configs


class TransientBackendError(Exception):
    """Retryable failure: HTTP 429/5xx or a network timeout."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class DiskCache:
    """One JSON record per cache key, written atomically. Safe for concurrent
    readers and writers within and across processes."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def get(self, digest: str) -> dict | None:
        path = self._path(digest)
        with self._lock:
            if not path.is_file():
                return None
            try:
                return json.loads(path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                return None

    def put(self, digest: str, record: dict) -> None:
        path = self._path(digest)
        with self._lock:
            fd, temp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as handle:
                    json.dump(record, handle, ensure_ascii=False)
                os.replace(temp, path)
            except OSError:
                try:
                    os.unlink(temp)
                except OSError:
                    pass
                raise


def _data_url(path: Path) -> str:
    mime = {
        ".jpg": "image/jpeg",
        ".jpeg": "image/jpeg",
        ".png": "image/png",
        ".gif": "image/gif",
        ".webp": "image/webp",
        ".bmp": "image/bmp",
    }.get(path.suffix.lower(), "application/octet-stream")
    encoded = base64.b64encode(path.read_bytes()).decode("ascii")
    return f"data:{mime};base64,{encoded}"


def _wire_messages(request: ChatRequest) -> list[dict]:
    messages = []
    for message in request.messages:
        if message.image is None:
            messages.append({"role": message.role, "content": message.text})
            continue
        path = Path(message.image)
        if path.is_file():
            url = _data_url(path)
        elif re.match(r"^(https?|file|data):", message.image):
            url = message.image
        else:
            url = "file://" + message.image
        messages.append(
            {
                "role": message.role,
                "content": [
                    {"type": "text", "text": message.text},
                    {"type": "image_url", "image_url": {"url": url}},
                ],
            }
        )
    return messages


class HttpBackend:
    def __init__(self, config: BackendConfig):
        self.config = config

    def complete(self, request: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.config.auth_env_var:
            token = os.environ.get(self.config.auth_env_var, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        payload = {
            "model": request.model_name or self.config.model_name,
            "messages": _wire_messages(request),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        try:
            http_response = requests.post(url, json=payload, headers=headers, timeout=self.config.timeout_s)
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise TransientBackendError(f"{url}: {exc}") from exc
        status = http_response.status_code
        if status == 429 or status >= 500:
            raise TransientBackendError(f"{url} returned {status}", status=status)
        if status >= 400:
            raise InvalidRequest(f"{url} returned {status}: {http_response.text[:500]}")
        body = http_response.json()
        choice = body["choices"][0]
        usage = body.get("usage", {})
        return ChatResponse(
            text=choice["message"].get("content") or "",
            finish_reason=choice.get("finish_reason", "stop"),
            token_usage={k: v for k, v in usage.items() if isinstance(v, int)},
        )


@dataclass
class MockRule:
    response_text: str
    request_digest: str = ""
    prompt_substring: str = ""
    status_sequence: list[int] = field(default_factory=list)
    calls: int = 0


def _searchable_text(request: ChatRequest) -> str:
    parts = []
    for message in request.messages:
        parts.append(message.text)
        if message.image is not None:
            parts.append(message.image)
    return "\n".join(parts)


_ATTR_LINE = re.compile(r"^- ([a-z_]+): (.+)$", re.MULTILINE)


class MockBackend:
    """Scripted stand-in for a real endpoint.

    Resolution order per request: transcript rule matched by request digest,
    then by prompt substring, then the programmatic responder, then a
    deterministic synthesized reply (when enabled). Counts every invocation
    and tracks peak concurrency so tests can assert on both.
    """

    def __init__(self, config: BackendConfig, transcript: list[MockRule] | None = None, responder=None):
        self.config = config
        self.rules = list(transcript or [])
        if config.transcript_path:
            self.rules.extend(load_transcript(config.transcript_path))
        self.responder = responder
        self.latency_s = 0.0
        self.calls = 0
        self._in_flight = 0
        self.max_in_flight_seen = 0
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
            self._in_flight += 1
            self.max_in_flight_seen = max(self.max_in_flight_seen, self._in_flight)
            rule = self._match(request)
            if rule is not None:
                sequence = rule.status_sequence or [200]
                status = sequence[min(rule.calls, len(sequence) - 1)]
                rule.calls += 1
        try:
            if self.latency_s:
                time.sleep(self.latency_s)
            if rule is not None:
                if status == 429 or status >= 500:
                    raise TransientBackendError(f"mock scripted status {status}", status=status)
                if status >= 400:
                    raise InvalidRequest(f"mock scripted status {status}")
                return ChatResponse(text=rule.response_text)
            if self.responder is not None:
                reply = self.responder(request)
                return reply if isinstance(reply, ChatResponse) else ChatResponse(text=str(reply))
            if self.config.synthesize_fallback:
                return ChatResponse(text=self._synthesize(request))
            raise InvalidRequest("mock backend has no transcript entry for this request")
        finally:
            with self._lock:
                self._in_flight -= 1

    def _match(self, request: ChatRequest) -> MockRule | None:
        digest = cache_key(request)
        haystack = _searchable_text(request)
        for rule in self.rules:
            if rule.request_digest and rule.request_digest == digest:
                return rule
            if rule.prompt_substring and rule.prompt_substring in haystack:
                return rule
        return None

    def _synthesize(self, request: ChatRequest) -> str:
        """Deterministic fallback reply derived from the request content.

        Understands the pipeline's context block ("- key: value" lines) well
        enough to produce grounded, parseable output, so full offline runs
        exercise every downstream stage.
        """
        digest = cache_key(request)
        text = _searchable_text(request)
        values = [value for _, value in _ATTR_LINE.findall(text)]
        subject = ", ".join(dict.fromkeys(values)) or "an agricultural subject"
        if "Question:" in text:
            turn_count = 3 + int(digest[:8], 16) % 3
            rng = random.Random(digest)
            openers = [
                "What does the image show?",
                "What can you tell me about this image?",
                "What is visible in this picture?",
            ]
            followups = [
                "How can this affect my crop?",
                "What should I do about it?",
                "How can I prevent this in the future?",
                "Is this a serious problem for my field?",
            ]
            lines = [f"Question: {rng.choice(openers)}", f"Answer: The image shows {subject}."]
            for index in range(turn_count - 1):
                lines.append(f"Question: {followups[(index + rng.randrange(4)) % len(followups)]}")
                lines.append(f"Answer: For {subject}, a practical step is option {digest[index]} based on the provided background.")
            return "\n".join(lines)
        if values:
            return f"A close-up view of {subject}, with characteristic features visible. [mock {digest[:8]}]"
        return f"mock reply [{digest[:8]}]"


def load_transcript(path: str | Path) -> list[MockRule]:
    """Mock transcript file: list of {request_digest | prompt_substring,
    response_text, optional status_sequence}."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    rules = []
    for entry in data:
        rules.append(
            MockRule(
                response_text=entry.get("response_text", ""),
                request_digest=entry.get("request_digest", ""),
                prompt_substring=entry.get("prompt_substring", ""),
                status_sequence=[int(s) for s in entry.get("status_sequence", [])],
            )
        )
    return rules


@dataclass(frozen=True)
class BatchItem:
    """One chat_batch result slot: exactly one of response or error is set."""

    response: ChatResponse | None = None
    error: Exception | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


class Gateway:
    """Routes requests to configured backends with caching and retries.

    Shareable across threads: the cache is lock-guarded and each call either
    returns a complete response or raises.
    """

    def __init__(
        self,
        backends: dict[str, BackendConfig],
        cache_dir: str | Path | None = None,
        sleeper=time.sleep,
        responders: dict | None = None,
    ):
        self.configs = dict(backends)
        self.cache = DiskCache(cache_dir) if cache_dir else None
        self._sleep = sleeper
        self._backends = {}
        for backend_id, config in self.configs.items():
            if config.kind == "mock":
                self._backends[backend_id] = MockBackend(config, responder=(responders or {}).get(backend_id))
            elif config.kind == "http":
                self._backends[backend_id] = HttpBackend(config)
            else:
                raise InvalidRequest(f"unknown backend kind {config.kind!r} for {backend_id!r}")

    def backend(self, backend_id: str):
        try:
            return self._backends[backend_id]
        except KeyError:
            raise InvalidRequest(f"backend {backend_id!r} is not configured") from None

    def chat(self, request: ChatRequest) -> ChatResponse:
        validate_request(request)
        backend = self.backend(request.backend_id)
        config = self.configs[request.backend_id]
        if any(m.image is not None for m in request.messages) and not config.vision_capable:
            raise ImageUnsupported(f"backend {request.backend_id!r} is not vision-capable")
        if not request.model_name and config.model_name:
            request = replace(request, model_name=config.model_name)

        digest = cache_key(request)
        if self.cache is not None:
            record = self.cache.get(digest)
            if record is not None:
                return ChatResponse(
                    text=record["text"],
                    finish_reason=record.get("finish_reason", "stop"),
                    token_usage=dict(record.get("token_usage", {})),
                    cache_hit=True,
                )

        attempts = max(1, config.retry.max_attempts)
        last_error: TransientBackendError | None = None
        for attempt in range(attempts):
            try:
                response = backend.complete(request)
            except TransientBackendError as exc:
                last_error = exc
                if attempt + 1 >= attempts:
                    break
                self._sleep(config.retry.base_delay_ms / 1000.0 * (2**attempt))
                continue
            response = replace(response, retries=attempt)
            if self.cache is not None:
                self.cache.put(
                    digest,
                    {
                        "key": digest,
                        "backend_id": request.backend_id,
                        "model_name": request.model_name,
                        "text": response.text,
                        "finish_reason": response.finish_reason,
                        "token_usage": response.token_usage,
                        "created_at": time.time(),
                    },
                )
            return response
        raise BackendUnavailable(
            f"backend {request.backend_id!r} failed after {attempts} attempt(s): {last_error}"
        )

    def chat_batch(self, requests_list: list[ChatRequest], max_in_flight: int) -> list[BatchItem]:
        """Run requests concurrently, never more than max_in_flight outstanding.
        Results are positionally aligned with the input; per-item failures land
        in their slot instead of failing the batch."""
        if max_in_flight < 1:
            raise InvalidRequest(f"max_in_flight must be >= 1, got {max_in_flight}")
        if not requests_list:
            return []

        def one(request: ChatRequest) -> BatchItem:
            try:
                return BatchItem(response=self.chat(request))
            except Exception as exc:
                return BatchItem(error=exc)

        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            return list(pool.map(one, requests_list))
