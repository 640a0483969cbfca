"""Text-completion backends behind one abstraction.

Two kinds: an OpenAI-compatible HTTP endpoint (plain completions wire by
default, chat wire as a toggle) and a deterministic replay store answering
prompts from recorded fixtures.  Live runs can record into a fixture so any
remote experiment becomes an offline regression test.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import requests

KINDS = ("http", "replay")
WIRES = ("completions", "chat")
DEFAULT_API_KEY_ENV = "EL_API_KEY"


class BackendError(Exception):
    """Base for machine-readable backend failures; .code identifies the class."""

    code = "backend-error"


class CredentialMissingError(BackendError):
    code = "credential-missing"


class EndpointUnreachableError(BackendError):
    code = "endpoint-unreachable"


class HttpStatusError(BackendError):
    code = "http-status"

    def __init__(self, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.status = status


class ReplayMissError(BackendError):
    code = "replay-miss"


@dataclass(frozen=True)
class BackendConfig:
    kind: str
    endpoint: str = ""
    model_id: str = ""
    fixture_path: str = ""
    temperature: float = 0.0
    max_output_tokens: int = 512
    request_timeout: float = 30.0
    max_retries: int = 3
    retry_backoff: float = 0.5
    parallelism: int = 4
    wire: str = "completions"
    api_key_env: str = DEFAULT_API_KEY_ENV
    record_path: str = ""

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"backend kind must be one of {KINDS}, got {self.kind!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.wire not in WIRES:
            raise ValueError(f"wire must be one of {WIRES}, got {self.wire!r}")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http backend requires an endpoint")
        if self.kind == "replay" and not self.fixture_path:
            raise ValueError("replay backend requires a fixture path")


@dataclass(frozen=True)
class Completion:
    prompt_digest: str
    raw_text: str
    backend_meta: Dict[str, object] = field(default_factory=dict)


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ReplayStore:
    """Replay fixture: JSONL of {digest, prompt, raw_text, model_id}.

    Re-recorded runs append; on load the journal is compacted last-wins.
    """

    def __init__(self, path: str):
        self.path = path
        self._by_digest: Dict[str, Dict[str, str]] = {}
        with open(path, "r", encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, 1):
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                    digest = entry["digest"]
                    raw_text = entry["raw_text"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: malformed fixture entry: {exc}") from exc
                if not isinstance(digest, str) or not isinstance(raw_text, str):
                    raise ValueError(f"{path}:{lineno}: digest and raw_text must be strings")
                self._by_digest[digest] = entry

    def __len__(self) -> int:
        return len(self._by_digest)

    def get(self, digest: str) -> Optional[Dict[str, str]]:
        return self._by_digest.get(digest)


class _Recorder:
    """Serialized appends of replay fixture entries."""

    def __init__(self, path: str):
        self.path = path
        self._lock = threading.Lock()

    def append(self, digest: str, prompt: str, raw_text: str, model_id: str) -> None:
        entry = {"digest": digest, "prompt": prompt, "raw_text": raw_text, "model_id": model_id}
        line = json.dumps(entry, ensure_ascii=False) + "\n"
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(line)


def record_fixture_entry(path: str, prompt: str, raw_text: str, model_id: str = "") -> None:
    _Recorder(path).append(prompt_digest(prompt), prompt, raw_text, model_id)


class _ReplayBackend:
    def __init__(self, cfg: BackendConfig):
        self.cfg = cfg
        self.store = ReplayStore(cfg.fixture_path)

    def complete(self, prompt: str) -> Completion:
        digest = prompt_digest(prompt)
        entry = self.store.get(digest)
        if entry is None:
            raise ReplayMissError(f"{self.cfg.fixture_path}: no recorded completion for digest {digest}")
        meta = {"model_id": entry.get("model_id", ""), "source": "replay"}
        return Completion(prompt_digest=digest, raw_text=entry["raw_text"], backend_meta=meta)


class _HttpBackend:
    def __init__(self, cfg: BackendConfig):
        self.cfg = cfg
        key = os.environ.get(cfg.api_key_env, "")
        if not key:
            raise CredentialMissingError(f"environment variable {cfg.api_key_env} is not set")
        self._headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        self._recorder = _Recorder(cfg.record_path) if cfg.record_path else None

    def _url(self) -> str:
        base = self.cfg.endpoint.rstrip("/")
        return base + ("/chat/completions" if self.cfg.wire == "chat" else "/completions")

    def _body(self, prompt: str) -> Dict[str, object]:
        if self.cfg.wire == "chat":
            return {"model": self.cfg.model_id,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": self.cfg.temperature,
                    "max_tokens": self.cfg.max_output_tokens}
        return {"model": self.cfg.model_id, "prompt": prompt,
                "temperature": self.cfg.temperature,
                "max_tokens": self.cfg.max_output_tokens}

    def _extract_text(self, data: dict) -> str:
        try:
            if self.cfg.wire == "chat":
                text = data["choices"][0]["message"]["content"]
            else:
                text = data["choices"][0]["text"]
        except (KeyError, IndexError, TypeError):
            text = None
        if not isinstance(text, str):
            raise HttpStatusError("malformed completion response body", status=200)
        return text

    def complete(self, prompt: str) -> Completion:
        url = self._url()
        body = self._body(prompt)
        digest = prompt_digest(prompt)
        last_error: Optional[BackendError] = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                time.sleep(self.cfg.retry_backoff * (2 ** (attempt - 1)))
            started = time.monotonic()
            try:
                resp = requests.post(url, json=body, headers=self._headers,
                                     timeout=self.cfg.request_timeout)
            except requests.RequestException as exc:
                last_error = EndpointUnreachableError(f"{url}: {exc}")
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = HttpStatusError(f"{url}: HTTP {resp.status_code}", status=resp.status_code)
                continue
            if resp.status_code != 200:
                raise HttpStatusError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}",
                                      status=resp.status_code)
            try:
                data = resp.json()
            except ValueError:
                raise HttpStatusError("completion response is not JSON", status=200)
            raw_text = self._extract_text(data)
            meta: Dict[str, object] = {"model_id": self.cfg.model_id,
                                       "latency_s": round(time.monotonic() - started, 6)}
            if isinstance(data.get("usage"), dict):
                meta["usage"] = data["usage"]
            if self._recorder is not None:
                self._recorder.append(digest, prompt, raw_text, self.cfg.model_id)
            return Completion(prompt_digest=digest, raw_text=raw_text, backend_meta=meta)
        assert last_error is not None
        raise last_error


def make_backend(cfg: BackendConfig):
    cfg.validate()
    if cfg.kind == "replay":
        return _ReplayBackend(cfg)
    return _HttpBackend(cfg)


def complete(cfg: BackendConfig, prompt: str) -> Completion:
    return make_backend(cfg).complete(prompt)


def batch_complete(cfg: BackendConfig,
                   prompts: Sequence[str]) -> List[Union[Completion, BackendError]]:
    """Complete many prompts; results align with input order.

    Per-prompt failures are recorded in place as BackendError values and
    never abort the batch; only fatal configuration errors raise.  At most
    cfg.parallelism requests are in flight at once.
    """
    backend = make_backend(cfg)
    if not prompts:
        return []
    results: List[Union[Completion, BackendError]] = [None] * len(prompts)  # type: ignore[list-item]
    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        futures = {pool.submit(backend.complete, prompt): i for i, prompt in enumerate(prompts)}
        for future in as_completed(futures):
            index = futures[future]
            try:
                results[index] = future.result()
            except BackendError as exc:
                results[index] = exc
    return results
