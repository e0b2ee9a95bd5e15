import math

import numpy as np
import pytest

from dpssm.optim import AdamW, OptimState, adamw_step, cosine_lr
from dpssm.nn import Linear


def test_zero_grad_zero_decay_unchanged():
    p = {"w": np.array([1.0, -2.0])}
    out = adamw_step(p, {"w": np.zeros(2)}, OptimState(), 1, lr=0.1, weight_decay=0.0)
    assert np.array_equal(out["w"], p["w"])


def test_first_step_is_minus_lr():
    out = adamw_step({"w": np.array(0.0)}, {"w": np.array(1.0)}, OptimState(), 1, lr=0.1, weight_decay=0.0)
    assert float(out["w"]) == pytest.approx(-0.1, rel=1e-6)


def test_decoupled_decay_geometric():
    p = {"w": np.array([3.0])}
    st = OptimState()
    for t in range(1, 6):
        p = adamw_step(p, {"w": np.zeros(1)}, st, t, lr=1.0, weight_decay=0.1)
        assert p["w"][0] == pytest.approx(3.0 * 0.9 ** t, rel=1e-12)


def test_errors():
    with pytest.raises(ValueError):
        adamw_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, OptimState(), 1, lr=0.1)
    with pytest.raises(ValueError):
        adamw_step({"w": np.zeros(2)}, {}, OptimState(), 0, lr=0.1)


def test_moment_shapes_follow_params():
    st = OptimState()
    adamw_step({"a": np.zeros((2, 3)), "b": np.zeros(4)}, {"a": np.ones((2, 3))}, st, 1, lr=0.1)
    assert st.m["a"].shape == (2, 3) and st.v["b"].shape == (4,)


def test_cosine_schedule():
    assert cosine_lr(0, 100, 3e-3, 3e-5) == 3e-3
    assert cosine_lr(99, 100, 3e-3, 3e-5) == pytest.approx(3e-5)
    assert cosine_lr(49.5, 100, 1.0, 0.0) == pytest.approx(0.5)


def test_wrapper_descends_quadratic():
    lin = Linear(2, 1, np.random.default_rng(0))
    opt = AdamW(lin.named_parameters(), lr=0.05, weight_decay=0.0)
    from dpssm import autograd as ag
    from dpssm.autograd import Tape
    X = np.random.default_rng(1).normal(size=(32, 2))
    y = X @ np.array([1.5, -0.5]) + 0.2
    losses = []
    for _ in range(300):
        opt.zero_grad()
        with Tape() as tape:
            loss = ag.mean(ag.square(ag.reshape(lin(X), (32,)) - y))
        tape.backward(loss)
        opt.step()
        losses.append(float(loss.data))
    assert losses[-1] < 1e-4 * losses[0]
