"""Finite-difference verification of reverse-mode gradients.

The checker is the independent oracle for every differentiable path in the
package: it perturbs parameter coordinates and compares central differences
against the gradients the tape produced. Run it in float64; float32 has too
little headroom for the difference quotients.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import Tensor, backward


def check_gradients(closure: Callable[[], Tensor], params: dict[str, Tensor],
                    eps: float = 1e-5, max_coords_per_param: int | None = None,
                    seed: int = 0) -> float:
    """Max relative error between tape gradients and central differences.

    closure must rebuild the forward pass from the params' current data on
    every call and return a scalar Tensor. Coordinates are subsampled
    deterministically when max_coords_per_param is set.
    """
    for p in params.values():
        p.grad = None
    loss = closure()
    backward(loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for name in sorted(params):
        p = params[name]
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
            coords.sort()
        else:
            coords = np.arange(n)
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            h = eps * max(1.0, abs(float(orig)))
            flat[i] = orig + h
            f_plus = float(closure().data)
            flat[i] = orig - h
            f_minus = float(closure().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(a_flat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            if err > worst:
                worst = err
    return worst
