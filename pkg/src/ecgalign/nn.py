"""Transformer building blocks composed from the autodiff primitives.

Attention is deliberately unfused so every path stays gradient-checkable.
All layers are pre-norm with affine layer norm and a GELU MLP of expansion 4.
Parameters live in flat name->Tensor dicts under caller-chosen prefixes.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import (Tensor, add, gelu, layer_norm, linear, matmul, mul,
                       reshape, scale, slice_axis, softmax, transpose)

MLP_RATIO = 4


def init_param(params: dict[str, Tensor], name: str, shape: tuple[int, ...],
               rng: np.random.Generator, dtype, kind: str = "weight") -> None:
    if kind == "weight":
        data = (0.02 * rng.standard_normal(shape)).astype(dtype)
    elif kind == "zeros":
        data = np.zeros(shape, dtype=dtype)
    elif kind == "ones":
        data = np.ones(shape, dtype=dtype)
    else:
        raise ValueError(kind)
    params[name] = Tensor(data, requires_grad=True)


def init_linear(params, prefix, fan_in, fan_out, rng, dtype) -> None:
    init_param(params, f"{prefix}.w", (fan_in, fan_out), rng, dtype)
    init_param(params, f"{prefix}.b", (fan_out,), rng, dtype, kind="zeros")


def init_ln(params, prefix, dim, rng, dtype) -> None:
    init_param(params, f"{prefix}.g", (dim,), rng, dtype, kind="ones")
    init_param(params, f"{prefix}.b", (dim,), rng, dtype, kind="zeros")


def ln_affine(x: Tensor, params, prefix) -> Tensor:
    return add(mul(layer_norm(x), params[f"{prefix}.g"]), params[f"{prefix}.b"])


def apply_linear(x: Tensor, params, prefix) -> Tensor:
    return linear(x, params[f"{prefix}.w"], params[f"{prefix}.b"])


def _split_heads(t: Tensor, heads: int) -> Tensor:
    n, d = t.shape
    return transpose(reshape(t, (n, heads, d // heads)), (1, 0, 2))


def _merge_heads(t: Tensor) -> Tensor:
    h, n, dh = t.shape
    return reshape(transpose(t, (1, 0, 2)), (n, h * dh))


def _attend(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Scaled dot-product attention over [N, d] inputs, multi-head."""
    dh = q.shape[-1] // heads
    qh = _split_heads(q, heads)
    kh = _split_heads(k, heads)
    vh = _split_heads(v, heads)
    scores = scale(matmul(qh, transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(dh))
    return _merge_heads(matmul(softmax(scores), vh))


def init_self_attention(params, prefix, dim, rng, dtype) -> None:
    init_linear(params, f"{prefix}.qkv", dim, 3 * dim, rng, dtype)
    init_linear(params, f"{prefix}.out", dim, dim, rng, dtype)


def self_attention(x: Tensor, params, prefix, heads: int) -> Tensor:
    dim = x.shape[-1]
    qkv = apply_linear(x, params, f"{prefix}.qkv")
    q = slice_axis(qkv, 1, 0, dim)
    k = slice_axis(qkv, 1, dim, 2 * dim)
    v = slice_axis(qkv, 1, 2 * dim, 3 * dim)
    return apply_linear(_attend(q, k, v, heads), params, f"{prefix}.out")


def init_cross_attention(params, prefix, dim_q, dim_kv, rng, dtype) -> None:
    init_linear(params, f"{prefix}.q", dim_q, dim_q, rng, dtype)
    init_linear(params, f"{prefix}.k", dim_kv, dim_q, rng, dtype)
    init_linear(params, f"{prefix}.v", dim_kv, dim_q, rng, dtype)
    init_linear(params, f"{prefix}.out", dim_q, dim_q, rng, dtype)


def cross_attention(x: Tensor, kv: Tensor, params, prefix, heads: int) -> Tensor:
    q = apply_linear(x, params, f"{prefix}.q")
    k = apply_linear(kv, params, f"{prefix}.k")
    v = apply_linear(kv, params, f"{prefix}.v")
    return apply_linear(_attend(q, k, v, heads), params, f"{prefix}.out")


def init_mlp(params, prefix, dim, rng, dtype) -> None:
    init_linear(params, f"{prefix}.fc1", dim, MLP_RATIO * dim, rng, dtype)
    init_linear(params, f"{prefix}.fc2", MLP_RATIO * dim, dim, rng, dtype)


def mlp(x: Tensor, params, prefix) -> Tensor:
    return apply_linear(gelu(apply_linear(x, params, f"{prefix}.fc1")),
                        params, f"{prefix}.fc2")


def init_encoder_block(params, prefix, dim, rng, dtype) -> None:
    init_ln(params, f"{prefix}.ln1", dim, rng, dtype)
    init_self_attention(params, f"{prefix}.attn", dim, rng, dtype)
    init_ln(params, f"{prefix}.ln2", dim, rng, dtype)
    init_mlp(params, f"{prefix}.mlp", dim, rng, dtype)


def encoder_block(x: Tensor, params, prefix, heads: int) -> Tensor:
    x = add(x, self_attention(ln_affine(x, params, f"{prefix}.ln1"),
                              params, f"{prefix}.attn", heads))
    x = add(x, mlp(ln_affine(x, params, f"{prefix}.ln2"), params, f"{prefix}.mlp"))
    return x


def init_decoder_layer(params, prefix, dim_q, dim_kv, rng, dtype) -> None:
    init_ln(params, f"{prefix}.ln1", dim_q, rng, dtype)
    init_self_attention(params, f"{prefix}.self", dim_q, rng, dtype)
    init_ln(params, f"{prefix}.ln2", dim_q, rng, dtype)
    init_cross_attention(params, f"{prefix}.cross", dim_q, dim_kv, rng, dtype)
    init_ln(params, f"{prefix}.ln3", dim_q, rng, dtype)
    init_mlp(params, f"{prefix}.mlp", dim_q, rng, dtype)


def decoder_layer(x: Tensor, kv: Tensor, params, prefix, heads: int) -> Tensor:
    """Query self-attention, then cross-attention over kv, then MLP."""
    x = add(x, self_attention(ln_affine(x, params, f"{prefix}.ln1"),
                              params, f"{prefix}.self", heads))
    x = add(x, cross_attention(ln_affine(x, params, f"{prefix}.ln2"), kv,
                               params, f"{prefix}.cross", heads))
    x = add(x, mlp(ln_affine(x, params, f"{prefix}.ln3"), params, f"{prefix}.mlp"))
    return x


def init_projector(params, prefix, dim_in, dim_out, rng, dtype) -> None:
    init_linear(params, f"{prefix}.fc1", dim_in, dim_in, rng, dtype)
    init_linear(params, f"{prefix}.fc2", dim_in, dim_out, rng, dtype)


def projector(x: Tensor, params, prefix) -> Tensor:
    """Two-layer nonlinear map into the shared embedding space."""
    return apply_linear(gelu(apply_linear(x, params, f"{prefix}.fc1")),
                        params, f"{prefix}.fc2")
