import math

import numpy as np
import pytest

from detectornet.errors import ConfigurationError, GraphStateError
from detectornet.optim import AdamState, ParamStore, adam_step


def scalar_adam(p, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(p)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(p)
    return out


def scalar_store(value):
    store = ParamStore(0)
    store.add("p", np.array(value))
    return store


def test_first_step_is_lr_times_sign():
    store = scalar_store(0.0)
    store["p"].grad = np.array(1.0)
    adam_step(store, AdamState(lr=1e-3))
    assert store["p"].data == pytest.approx(-1e-3, abs=1e-6)


def test_zero_gradient_leaves_parameter():
    store = scalar_store(0.7)
    store["p"].grad = np.array(0.0)
    adam_step(store, AdamState(lr=1e-3))
    assert store["p"].data == 0.7


def test_quadratic_matches_scalar_oracle():
    store = scalar_store(0.0)
    state = AdamState(lr=0.1)
    trajectory = []
    for _ in range(10):
        store["p"].grad = 2.0 * (store["p"].data - 2.0)
        adam_step(store, state)
        trajectory.append(float(store["p"].data))
    expect = scalar_adam(0.0, lambda p: 2.0 * (p - 2.0), 10, 0.1)
    np.testing.assert_allclose(trajectory, expect, rtol=0, atol=1e-12)
    dist = [abs(p - 2.0) for p in [0.0] + trajectory]
    assert all(b < a for a, b in zip(dist, dist[1:]))


def test_weight_decay_is_l2_gradient():
    store = scalar_store(1.0)
    store["p"].grad = np.array(0.0)
    adam_step(store, AdamState(lr=1e-3, weight_decay=0.5))
    # the decay term 0.5 * p acts like a positive gradient
    assert store["p"].data == pytest.approx(1.0 - 1e-3, abs=1e-6)


def test_missing_gradient_named():
    store = scalar_store(1.0)
    with pytest.raises(GraphStateError, match="'p'"):
        adam_step(store, AdamState())


def test_xavier_bounds_and_state_dict():
    store = ParamStore(3)
    w = store.xavier("w", 40, 60)
    assert np.abs(w.data).max() <= math.sqrt(6 / 100)
    snap = store.state_dict()
    w.data[...] = 0.0
    store.load_state_dict(snap)
    assert np.array_equal(store["w"].data, snap["w"])
    with pytest.raises(ConfigurationError):
        store.load_state_dict({"w": np.zeros((2, 2))})
