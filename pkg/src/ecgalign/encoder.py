"""Lead-aware ECG encoder: per-lead tokenization, lead/temporal embeddings,
dynamic lead masking, lead-independent segment masking, transformer encoding.

Masked tokens are dropped, not replaced: the encoder consumes only kept
tokens, which makes masking a lead during pretraining bit-identical to the
lead being absent at inference. To preserve that identity, the tokenizer
projects each lead with its own fixed-shape [M, p] x [p, d] matmul; a single
batched matmul over all present leads could change BLAS accumulation order
with the number of leads and break bitwise equality.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import (Tensor, add, concat, gather, l2_normalize, mean_pool,
                       matmul, reshape)
from .data import NUM_LEADS, ECGRecord
from . import nn


@dataclass(frozen=True)
class TokenizerConfig:
    """Encoder hyperparameters; segment count M is derived as S / token_length."""

    token_length: int = 100
    embed_dim: int = 64
    num_layers: int = 3
    num_heads: int = 4

    def validate(self) -> "TokenizerConfig":
        if self.token_length <= 0 or self.embed_dim <= 0:
            raise ValueError("token_length and embed_dim must be positive")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        return self

    def num_segments(self, signal_length: int) -> int:
        if signal_length % self.token_length != 0:
            raise ValueError(f"token_length {self.token_length} does not divide "
                             f"signal length {signal_length}")
        m = signal_length // self.token_length
        if m < 1:
            raise ValueError("need at least one segment")
        return m


@dataclass
class TokenGrid:
    """Per-lead token sequences with their keep flags.

    tokens is [P, M, d] for the P present leads in ascending canonical order;
    row r belongs to canonical lead lead_ids[r]; column m is segment m.
    """

    tokens: Tensor
    lead_ids: np.ndarray
    keep_mask: np.ndarray

    @property
    def num_leads(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def num_segments(self) -> int:
        return int(self.tokens.shape[1])


def init_encoder_params(cfg: TokenizerConfig, num_segments: int, shared_dim: int,
                        rng: np.random.Generator, dtype=np.float32,
                        params: dict[str, Tensor] | None = None,
                        prefix: str = "enc") -> dict[str, Tensor]:
    cfg.validate()
    params = params if params is not None else {}
    d = cfg.embed_dim
    nn.init_param(params, f"{prefix}.proj_w", (cfg.token_length, d), rng, dtype)
    nn.init_param(params, f"{prefix}.lead_emb", (NUM_LEADS, d), rng, dtype)
    nn.init_param(params, f"{prefix}.temp_emb", (num_segments, d), rng, dtype)
    for i in range(cfg.num_layers):
        nn.init_encoder_block(params, f"{prefix}.block{i}", d, rng, dtype)
    nn.init_ln(params, f"{prefix}.ln_f", d, rng, dtype)
    nn.init_projector(params, f"{prefix}.proj", d, shared_dim, rng, dtype)
    return params


def tokenize(rec: ECGRecord, cfg: TokenizerConfig, params: dict[str, Tensor],
             prefix: str = "enc") -> TokenGrid:
    """Project non-overlapping segments and add lead + temporal embeddings."""
    rec = rec.canonicalized()
    if not rec.lead_ids:
        raise ValueError(f"{rec.record_id}: no leads present")
    m = cfg.num_segments(rec.signal.shape[1])
    w = params[f"{prefix}.proj_w"]
    temp = params[f"{prefix}.temp_emb"]
    if temp.shape[0] != m:
        raise ValueError(f"record has M={m} segments but the model was built "
                         f"for M={temp.shape[0]}")
    dtype = w.dtype
    rows = []
    for row, lead in enumerate(rec.lead_ids):
        segments = Tensor(rec.signal[row].reshape(m, cfg.token_length).astype(dtype))
        tok = matmul(segments, w)
        tok = add(tok, gather(params[f"{prefix}.lead_emb"], np.array([lead - 1])))
        tok = add(tok, temp)
        rows.append(reshape(tok, (1, m, cfg.embed_dim)))
    tokens = concat(rows, axis=0) if len(rows) > 1 else rows[0]
    return TokenGrid(tokens=tokens,
                     lead_ids=np.asarray(rec.lead_ids, dtype=int),
                     keep_mask=np.ones((len(rec.lead_ids), m), dtype=bool))


def restrict_to_leads(grid: TokenGrid, keep_lead_ids) -> TokenGrid:
    """Drop whole lead rows; the deterministic core of dynamic lead masking."""
    keep = set(int(l) for l in keep_lead_ids)
    rows = [i for i, l in enumerate(grid.lead_ids) if int(l) in keep]
    if not rows:
        raise ValueError("masking removed every lead")
    idx = np.asarray(rows, dtype=int)
    return TokenGrid(tokens=gather(grid.tokens, idx),
                     lead_ids=grid.lead_ids[idx],
                     keep_mask=grid.keep_mask[idx].copy())


def draw_lead_mask(rng: np.random.Generator, min_masked: int = 9,
                   max_masked: int = 11) -> np.ndarray:
    """Draw the masked-lead row set: uniform count in [min, max], uniform leads."""
    if not 0 <= min_masked <= max_masked <= NUM_LEADS - 1:
        raise ValueError(f"invalid mask-count range [{min_masked}, {max_masked}]")
    n_mask = int(rng.integers(min_masked, max_masked + 1))
    return rng.choice(NUM_LEADS, size=n_mask, replace=False)


def dynamic_lead_mask(grid: TokenGrid, min_masked: int = 9, max_masked: int = 11,
                      rng: np.random.Generator | None = None) -> TokenGrid:
    """Mask a uniformly drawn number of randomly chosen leads (pretraining only)."""
    if grid.num_leads != NUM_LEADS:
        raise ValueError("dynamic lead masking requires a full 12-lead grid")
    if rng is None:
        raise ValueError("rng required")
    masked = set(draw_lead_mask(rng, min_masked, max_masked).tolist())
    survivors = [int(l) for i, l in enumerate(grid.lead_ids) if i not in masked]
    return restrict_to_leads(grid, survivors)


def mask_segments(grid: TokenGrid, masked_indices: list[np.ndarray]) -> TokenGrid:
    """Clear keep flags at explicit per-lead segment indices."""
    mask = grid.keep_mask.copy()
    for row, idx in enumerate(masked_indices):
        mask[row, np.asarray(idx, dtype=int)] = False
    return replace(grid, keep_mask=mask)


def draw_segment_mask(rng: np.random.Generator, num_leads: int, num_segments: int,
                      ratio: float) -> list[np.ndarray]:
    """Per-lead masked segment indices: exactly floor(ratio * M) each,
    drawn independently per lead."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError("mask ratio must be in [0, 1)")
    n = int(np.floor(ratio * num_segments))
    return [rng.permutation(num_segments)[:n] for _ in range(num_leads)]


def segment_mask(grid: TokenGrid, ratio: float = 0.25,
                 rng: np.random.Generator | None = None) -> TokenGrid:
    """Mask exactly floor(ratio * M) segments per lead, independently per lead."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError("mask ratio must be in [0, 1)")
    if int(np.floor(ratio * grid.num_segments)) == 0:
        return replace(grid, keep_mask=grid.keep_mask.copy())
    if rng is None:
        raise ValueError("rng required")
    drawn = draw_segment_mask(rng, grid.num_leads, grid.num_segments, ratio)
    return mask_segments(grid, drawn)


def encode(grid: TokenGrid, cfg: TokenizerConfig, params: dict[str, Tensor],
           prefix: str = "enc") -> tuple[Tensor, Tensor]:
    """Run kept tokens through the transformer.

    Returns (token features [K, d], pooled projected embedding [shared_dim],
    L2-normalized). Token order is lead-major, segment-minor.
    """
    p, m, d = grid.tokens.shape
    flat_keep = np.flatnonzero(grid.keep_mask.reshape(-1))
    if flat_keep.size == 0:
        raise ValueError("empty token set after masking")
    x = gather(reshape(grid.tokens, (p * m, d)), flat_keep)
    for i in range(cfg.num_layers):
        x = nn.encoder_block(x, params, f"{prefix}.block{i}", cfg.num_heads)
    z = nn.ln_affine(x, params, f"{prefix}.ln_f")
    pooled = reshape(mean_pool(z, axis=0), (1, d))
    projected = nn.projector(pooled, params, f"{prefix}.proj")
    normalized = l2_normalize(projected)
    return z, reshape(normalized, (normalized.shape[-1],))
