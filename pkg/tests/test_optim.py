"""AdamW single-step oracles and schedule endpoint checks."""

import math

import numpy as np
import pytest

from ecgalign.autodiff import Tensor
from ecgalign.optim import AdamW, cosine_schedule


def test_zero_grad_zero_decay_leaves_params():
    p = Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
    p.grad = np.zeros(2, dtype=np.float32)
    opt.step()
    np.testing.assert_allclose(p.data, [1.0, -2.0])


def test_single_scalar_step_matches_closed_form():
    # closed-form first Adam step: update = lr * g/(|g| + eps) since
    # mhat = g and vhat = g^2 after bias correction
    lr, b1, b2, eps, g0, p0 = 0.1, 0.9, 0.999, 1e-8, 0.5, 1.0
    m = (1 - b1) * g0
    v = (1 - b2) * g0 * g0
    mhat = m / (1 - b1)
    vhat = v / (1 - b2)
    expected = p0 - lr * mhat / (math.sqrt(vhat) + eps)

    p = Tensor(np.array([p0]), requires_grad=True)
    opt = AdamW({"p": p}, lr=lr, weight_decay=0.0, beta1=b1, beta2=b2, eps=eps)
    p.grad = np.array([g0])
    opt.step()
    np.testing.assert_allclose(p.data, [expected], rtol=1e-12)


def test_decoupled_decay_shrinks_by_lr_wd_value():
    p = Tensor(np.array([2.0]), requires_grad=True)
    opt = AdamW({"p": p}, lr=0.01, weight_decay=0.1)
    p.grad = np.array([0.0])
    opt.step()
    np.testing.assert_allclose(p.data, [2.0 - 0.01 * 0.1 * 2.0], rtol=1e-12)


def test_schedule_endpoints():
    assert cosine_schedule(5, 100, 2e-4, warmup_steps=5) == pytest.approx(2e-4)
    assert cosine_schedule(100, 100, 2e-4, warmup_steps=5) == pytest.approx(0.0, abs=1e-20)
    # midpoint of the decay span
    mid = 5 + (100 - 5) / 2
    assert cosine_schedule(int(mid) if mid.is_integer() else mid, 100, 2e-4,
                           warmup_steps=5) == pytest.approx(1e-4)


def test_schedule_warmup_is_linear():
    lrs = [cosine_schedule(s, 50, 1.0, warmup_steps=10) for s in range(11)]
    np.testing.assert_allclose(lrs, [s / 10 for s in range(11)])


def test_schedule_rejects_out_of_range():
    with pytest.raises(ValueError):
        cosine_schedule(101, 100, 1.0)
