"""Pure-numpy reference implementations of the hot training kernels.

These are the fallback used when the compiled extension is unavailable (or
forced via ``ECGALIGN_KERNELS=numpy``). Both backends implement the same
functions with the same semantics; agreement is checked in the test suite.

All functions operate over the last axis ("rows" below are all leading axes
flattened) and preserve the input dtype (float32 or float64).
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327

BACKEND = "numpy"


def gelu_fwd(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU."""
    return (0.5 * x * (1.0 + erf(x * _INV_SQRT2))).astype(x.dtype, copy=False)


def gelu_bwd(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return (dy * (cdf + x * pdf)).astype(x.dtype, copy=False)


def softmax_fwd(x: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    if x.shape[-1] == 0:
        raise ValueError("softmax over empty axis")
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_bwd(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    inner = np.sum(y * dy, axis=-1, keepdims=True)
    return y * (dy - inner)


def layer_norm_fwd(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Normalize the last axis to zero mean / unit variance (no affine).

    Returns (xhat, rstd) where rstd has the row shape (last axis dropped).
    """
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * rstd
    return xhat.astype(x.dtype, copy=False), rstd[..., 0].astype(x.dtype, copy=False)


def layer_norm_bwd(xhat: np.ndarray, rstd: np.ndarray, dy: np.ndarray) -> np.ndarray:
    r = rstd[..., None]
    mean_dy = np.mean(dy, axis=-1, keepdims=True)
    mean_dy_xhat = np.mean(dy * xhat, axis=-1, keepdims=True)
    return (r * (dy - mean_dy - xhat * mean_dy_xhat)).astype(xhat.dtype, copy=False)


def adamw_update(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray,
                 step: int, lr: float, beta1: float, beta2: float,
                 eps: float, weight_decay: float) -> None:
    """One decoupled-weight-decay Adam update, in place on p, m, v."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    mhat = m / bc1
    vhat = v / bc2
    p -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * p)
