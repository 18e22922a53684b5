"""Text tower: a tiny trainable reference encoder plus an HTTP embedding client.

The reference encoder is whitespace/punctuation tokenized, lowercased, with a
vocabulary frozen from the pretraining corpus; out-of-vocabulary tokens map to
a dedicated unknown id. Reports and entity-query strings share one encoder
instance. The external client swaps in a pretrained embedder behind the same
normalized-vector contract and is frozen by definition.
"""

from __future__ import annotations

import json
import re
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import nn
from .autodiff import Tensor, gather, l2_normalize, mean_pool, reshape

_TOKEN_RE = re.compile(r"[a-z0-9]+")
UNK = "<unk>"


def tokenize_text(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class TextEmbedding:
    """A unit-norm embedding tagged with the hash of its source text."""

    vector: np.ndarray
    source_hash: str

    @classmethod
    def create(cls, text: str, vector: np.ndarray) -> "TextEmbedding":
        from .utils import sha256_text
        norm = float(np.linalg.norm(vector))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"embedding not unit norm: {norm}")
        return cls(vector=vector, source_hash=sha256_text(text))


@dataclass
class TextVocab:
    token_to_id: dict[str, int]

    @classmethod
    def build(cls, texts) -> "TextVocab":
        tokens = sorted({t for text in texts for t in tokenize_text(text)})
        mapping = {UNK: 0}
        for tok in tokens:
            mapping[tok] = len(mapping)
        return cls(mapping)

    def __len__(self) -> int:
        return len(self.token_to_id)

    def encode(self, text: str) -> np.ndarray:
        ids = [self.token_to_id.get(t, 0) for t in tokenize_text(text)]
        if not ids:
            ids = [0]
        return np.asarray(ids, dtype=int)


@dataclass(frozen=True)
class TextConfig:
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4

    def validate(self) -> "TextConfig":
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        return self


def init_text_params(cfg: TextConfig, vocab_size: int, shared_dim: int,
                     rng: np.random.Generator, dtype=np.float32,
                     params: dict[str, Tensor] | None = None,
                     prefix: str = "txt") -> dict[str, Tensor]:
    cfg.validate()
    params = params if params is not None else {}
    nn.init_param(params, f"{prefix}.tok_emb", (vocab_size, cfg.embed_dim), rng, dtype)
    for i in range(cfg.num_layers):
        nn.init_encoder_block(params, f"{prefix}.block{i}", cfg.embed_dim, rng, dtype)
    nn.init_ln(params, f"{prefix}.ln_f", cfg.embed_dim, rng, dtype)
    nn.init_projector(params, f"{prefix}.proj", cfg.embed_dim, shared_dim, rng, dtype)
    return params


def embed_text(text: str, vocab: TextVocab, cfg: TextConfig,
               params: dict[str, Tensor], prefix: str = "txt") -> Tensor:
    """Tokenize, contextualize, mean-pool, project, L2-normalize."""
    ids = vocab.encode(text)
    x = gather(params[f"{prefix}.tok_emb"], ids)
    for i in range(cfg.num_layers):
        x = nn.encoder_block(x, params, f"{prefix}.block{i}", cfg.num_heads)
    x = nn.ln_affine(x, params, f"{prefix}.ln_f")
    pooled = reshape(mean_pool(x, axis=0), (1, cfg.embed_dim))
    projected = nn.projector(pooled, params, f"{prefix}.proj")
    normalized = l2_normalize(projected)
    return reshape(normalized, (normalized.shape[-1],))


# ---------------------------------------------------------------------------
# external embedding endpoint
# ---------------------------------------------------------------------------

class EndpointError(RuntimeError):
    """Embedding endpoint unreachable after retries, or contract violation."""


@dataclass
class EmbeddingEndpointConfig:
    url: str
    auth_header_name: str | None = None
    auth_header_value: str | None = None
    timeout_s: float = 10.0
    max_retries: int = 3
    backoff_s: float = 0.25
    max_in_flight: int = 4
    chunk_size: int = 16
    projection_seed: int | None = None  # enables random projection on dim mismatch


def _post_chunk(cfg: EmbeddingEndpointConfig, texts: list[str]) -> list[list[float]]:
    body = json.dumps({"texts": texts}).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    if cfg.auth_header_name and cfg.auth_header_value:
        headers[cfg.auth_header_name] = cfg.auth_header_value
    delay = cfg.backoff_s
    last: Exception | None = None
    for attempt in range(cfg.max_retries + 1):
        try:
            req = urllib.request.Request(cfg.url, data=body, headers=headers,
                                         method="POST")
            with urllib.request.urlopen(req, timeout=cfg.timeout_s) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
            return payload["embeddings"]
        except (urllib.error.URLError, TimeoutError, KeyError,
                json.JSONDecodeError) as exc:
            last = exc
            if attempt < cfg.max_retries:
                time.sleep(delay)
                delay *= 2
    raise EndpointError(f"embedding endpoint failed after "
                        f"{cfg.max_retries + 1} attempts: {last}") from last


def embed_batch_external(texts: list[str], cfg: EmbeddingEndpointConfig,
                         d_shared: int) -> list[TextEmbedding]:
    """Fetch embeddings over HTTP; validate/project dimension; normalize."""
    chunks = [texts[i:i + cfg.chunk_size] for i in range(0, len(texts), cfg.chunk_size)]
    workers = max(1, cfg.max_in_flight)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda c: _post_chunk(cfg, c), chunks))
    raw = [np.asarray(vec, dtype=np.float64) for chunk in results for vec in chunk]
    out = []
    projection: np.ndarray | None = None
    for text, vec in zip(texts, raw):
        if vec.shape[0] != d_shared:
            if cfg.projection_seed is None:
                raise EndpointError(f"embedding dimension {vec.shape[0]} != "
                                    f"{d_shared} and no projection configured")
            if projection is None or projection.shape[0] != vec.shape[0]:
                rng = np.random.Generator(np.random.PCG64(cfg.projection_seed))
                projection = rng.standard_normal((vec.shape[0], d_shared))
                projection /= np.sqrt(vec.shape[0])
            vec = vec @ projection
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise EndpointError("embedding endpoint returned a zero vector")
        out.append(TextEmbedding.create(text, (vec / norm).astype(np.float32)))
    return out
