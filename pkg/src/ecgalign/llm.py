"""Chat-completion HTTP client with retry/backoff and a response cache.

Requests are plain chat-completion POSTs; temperature-0 responses are cached
on disk keyed by (model, temperature, prompt) so re-running a mining pass is
a byte-wise no-op and costs no endpoint traffic.
"""

from __future__ import annotations

import json
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from .utils import canonical_json, sha256_text


class LLMError(RuntimeError):
    """Endpoint failure after retries, or a malformed response."""


@dataclass
class LLMClientConfig:
    endpoint_url: str = ""
    model: str = ""
    temperature: float = 0.0
    max_retries: int = 3
    backoff_s: float = 0.5
    timeout_s: float = 60.0
    cache_dir: str | None = None
    auth_token_env: str | None = None  # name of env var holding the bearer token


class ChatCompletionClient:
    def __init__(self, config: LLMClientConfig):
        if not config.endpoint_url:
            raise ValueError("endpoint_url required")
        self.config = config
        if config.cache_dir:
            Path(config.cache_dir).mkdir(parents=True, exist_ok=True)

    def _cache_path(self, prompt: str) -> Path | None:
        cfg = self.config
        if not cfg.cache_dir or cfg.temperature != 0.0:
            return None
        key = sha256_text(canonical_json(
            {"model": cfg.model, "temperature": cfg.temperature, "prompt": prompt}))
        return Path(cfg.cache_dir) / f"{key}.json"

    def complete(self, prompt: str, bypass_cache: bool = False) -> str:
        cache = self._cache_path(prompt)
        if cache is not None and not bypass_cache and cache.exists():
            return json.loads(cache.read_text())["response"]
        text = self._post(prompt)
        if cache is not None:
            tmp = cache.with_suffix(".tmp")
            tmp.write_text(json.dumps({
                "model": self.config.model,
                "temperature": self.config.temperature,
                "prompt": prompt,
                "response": text,
            }, sort_keys=True))
            os.replace(tmp, cache)
        return text

    def _post(self, prompt: str) -> str:
        cfg = self.config
        body = json.dumps({
            "model": cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
        }).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if cfg.auth_token_env:
            token = os.environ.get(cfg.auth_token_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        delay = cfg.backoff_s
        last_error: Exception | None = None
        for attempt in range(cfg.max_retries + 1):
            try:
                req = urllib.request.Request(cfg.endpoint_url, data=body,
                                             headers=headers, method="POST")
                with urllib.request.urlopen(req, timeout=cfg.timeout_s) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                return payload["choices"][0]["message"]["content"]
            except (urllib.error.URLError, TimeoutError, KeyError, IndexError,
                    json.JSONDecodeError) as exc:
                if isinstance(exc, urllib.error.HTTPError) and exc.code < 500:
                    raise LLMError(f"endpoint rejected request: {exc}") from exc
                last_error = exc
                if attempt < cfg.max_retries:
                    time.sleep(delay)
                    delay *= 2
        raise LLMError(f"endpoint failed after {cfg.max_retries + 1} attempts: "
                       f"{last_error}") from last_error
