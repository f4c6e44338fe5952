import math

import numpy as np
import pytest

from config import AdamWConfig
from errors import DivergenceError, ShapeError
from lab.autodiff import Graph
from lab.optim import AdamWState, adamw_step, cosine_warmup_lr


def test_warmup_is_linear():
    assert cosine_warmup_lr(0, 100, 0.1, 1.0) == 0.0
    assert cosine_warmup_lr(5, 100, 0.1, 1.0) == pytest.approx(0.5)
    assert cosine_warmup_lr(10, 100, 0.1, 1.0) == pytest.approx(1.0)


def test_cosine_decay():
    assert cosine_warmup_lr(55, 100, 0.1, 1.0) == pytest.approx(0.5)
    assert cosine_warmup_lr(100, 100, 0.1, 1.0) == pytest.approx(0.0, abs=1e-12)
    lrs = [cosine_warmup_lr(s, 100, 0.1, 1.0) for s in range(10, 101)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_first_step_moves_by_lr():
    graph = Graph("p")
    p = graph.param("p", np.ones(3))
    adamw_step(graph.items(), {"p": np.array([2.0, -3.0, 0.5])}, AdamWState(), 0.1, AdamWConfig(weight_decay=0.0))
    np.testing.assert_allclose(p.data, [0.9, 1.1, 0.9], rtol=1e-5)


def test_weight_decay_is_decoupled():
    graph = Graph("p")
    p = graph.param("p", np.full(2, 2.0))
    adamw_step(graph.items(), {"p": np.zeros(2)}, AdamWState(), 0.1, AdamWConfig(weight_decay=0.5))
    # zero gradient: only the decay term acts
    np.testing.assert_allclose(p.data, 2.0 - 0.1 * 0.5 * 2.0, rtol=1e-5)


def test_missing_gradient_is_skipped():
    graph = Graph("p")
    a = graph.param("a", np.ones(2))
    b = graph.param("b", np.ones(2))
    state = adamw_step(graph.items(), {"a": np.ones(2), "b": None}, AdamWState(), 0.1, AdamWConfig())
    assert state.step == 1
    assert "b" not in state.m
    np.testing.assert_allclose(b.data, 1.0)
    assert not np.allclose(a.data, 1.0)


def test_bad_gradients():
    graph = Graph("p")
    graph.param("a", np.ones(2))
    with pytest.raises(ShapeError):
        adamw_step(graph.items(), {"a": np.ones(3)}, AdamWState(), 0.1, AdamWConfig())
    with pytest.raises(DivergenceError) as info:
        adamw_step(graph.items(), {"a": np.array([1.0, math.inf])}, AdamWState(), 0.1, AdamWConfig())
    assert info.value.part == "a"


def test_minimizes_a_quadratic():
    graph = Graph("p")
    p = graph.param("p", np.array([3.0, -2.0]))
    state = AdamWState()
    for step in range(1, 301):
        adamw_step(graph.items(), {"p": 2 * p.data.astype(np.float64)}, state, 0.05, AdamWConfig(weight_decay=0.0))
    assert np.all(np.abs(p.data) < 0.1)
