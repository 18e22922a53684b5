"""Cardiac query network: entity-query embeddings cross-attend to ECG tokens.

A stack of decoder layers (query self-attention, cross-attention with the
ECG token features as keys/values, MLP) followed by one scalar head shared
across queries. Sharing the head keeps the weights query-count agnostic, so
unseen class names can be scored at inference by embedding them as queries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .autodiff import Tensor, bce_with_logits, linear, mean_pool, reshape


@dataclass(frozen=True)
class CQConfig:
    num_layers: int = 4
    num_heads: int = 4

    def validate(self) -> "CQConfig":
        if self.num_layers < 1 or self.num_heads < 1:
            raise ValueError("num_layers and num_heads must be positive")
        return self


def init_cq_params(cfg: CQConfig, query_dim: int, kv_dim: int,
                   rng: np.random.Generator, dtype=np.float32,
                   params: dict[str, Tensor] | None = None,
                   prefix: str = "cq") -> dict[str, Tensor]:
    cfg.validate()
    if query_dim % cfg.num_heads != 0:
        raise ValueError("query_dim must be divisible by num_heads")
    params = params if params is not None else {}
    for i in range(cfg.num_layers):
        nn.init_decoder_layer(params, f"{prefix}.layer{i}", query_dim, kv_dim,
                              rng, dtype)
    nn.init_ln(params, f"{prefix}.ln_f", query_dim, rng, dtype)
    nn.init_linear(params, f"{prefix}.head", query_dim, 1, rng, dtype)
    return params


def query_forward(queries: Tensor, ecg_tokens: Tensor, cfg: CQConfig,
                  params: dict[str, Tensor], prefix: str = "cq") -> Tensor:
    """Per-query logits [Q]; callers apply sigmoid where probabilities are needed."""
    if queries.ndim != 2 or queries.shape[0] < 1:
        raise ValueError("need at least one query")
    if ecg_tokens.ndim != 2 or ecg_tokens.shape[0] < 1:
        raise ValueError("need at least one ECG token")
    x = queries
    for i in range(cfg.num_layers):
        x = nn.decoder_layer(x, ecg_tokens, params, f"{prefix}.layer{i}",
                             cfg.num_heads)
    x = nn.ln_affine(x, params, f"{prefix}.ln_f")
    logits = linear(x, params[f"{prefix}.head.w"], params[f"{prefix}.head.b"])
    return reshape(logits, (queries.shape[0],))


def cq_loss(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy over queries, in stabilized logit form."""
    y = np.asarray(labels)
    if y.shape != tuple(logits.shape):
        raise ValueError(f"labels shape {y.shape} != logits shape {logits.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    return mean_pool(bce_with_logits(logits, y), axis=0)
