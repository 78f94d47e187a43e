import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fallfuse import nn
from fallfuse.errors import ConfigError, InputError
from fallfuse.nn import layers as L
from fallfuse.nn.layers import Mode, Sequential


def test_softmax_examples():
    np.testing.assert_allclose(nn.softmax([[0.0, 0.0]]), [[0.5, 0.5]])
    np.testing.assert_allclose(nn.softmax([[1000.0, 1000.0]]), [[0.5, 0.5]])
    e = math.e
    np.testing.assert_allclose(nn.softmax([[1.0, 2.0]]), [[1 / (1 + e), e / (1 + e)]], rtol=0, atol=1e-15)
    np.testing.assert_allclose(nn.softmax([[1.0, 2.0]]), [[0.26894, 0.73106]], atol=1e-5)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=1, max_size=20))
def test_softmax_rows_sum_to_one(rows):
    p = nn.softmax(np.array(rows))
    assert np.max(np.abs(p.sum(axis=1) - 1)) <= 1e-12
    assert (p >= 0).all()


def test_cross_entropy_examples():
    loss, _ = nn.cross_entropy([[1.0, 0.0]], [0])
    assert loss == pytest.approx(0.0, abs=1e-12)
    for label in (0, 1):
        loss, _ = nn.cross_entropy([[0.5, 0.5]], [label])
        assert loss == pytest.approx(math.log(2), abs=1e-15)
    loss, _ = nn.cross_entropy([[1.0, 0.0]], [1])
    assert loss == pytest.approx(-math.log(1e-12))


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(InputError):
        nn.cross_entropy([[0.5, 0.5]], [2])
    with pytest.raises(InputError):
        nn.cross_entropy([[0.5, 0.5], [0.5, 0.5]], [1])


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_fused_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((6, 2)) * 3
    labels = rng.integers(0, 2, 6)
    assert nn.grad_check_softmax_ce(logits, labels, 1e-5) <= 1e-6


def test_sgd_single_step():
    p = {"w": np.array([1.0])}
    nn.Optimizer(nn.OptimizerConfig("SGD", lr=0.1)).step(p, {"w": np.array([2.0])})
    assert p["w"][0] == pytest.approx(0.8, abs=1e-15)


def test_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    opt = nn.Optimizer(nn.OptimizerConfig("SGD", lr=0.1, momentum=0.9))
    for _ in range(3):
        opt.step(p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    q = {"w": np.array([1.0, -2.0])}
    adam = nn.Optimizer(nn.OptimizerConfig("Adam"))
    for _ in range(3):
        adam.step(q, {"w": np.zeros(2)})
    assert np.max(np.abs(q["w"] - [1.0, -2.0])) <= 1e-12


def test_adam_single_step_hand_stepped():
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    m = (1 - b1) * 1.0
    v = (1 - b2) * 1.0
    m_hat, v_hat = m / (1 - b1), v / (1 - b2)
    expected = 0.5 - lr * m_hat / (math.sqrt(v_hat) + eps)
    p = {"w": np.full(3, 0.5)}
    nn.Optimizer(nn.OptimizerConfig("Adam", lr=lr)).step(p, {"w": np.ones(3)})
    np.testing.assert_allclose(p["w"], expected, rtol=0, atol=1e-15)
    assert 0.5 - p["w"][0] == pytest.approx(lr, rel=1e-7)


def test_sgd_momentum_accumulates():
    p = {"w": np.array([0.0])}
    opt = nn.Optimizer(nn.OptimizerConfig("SGD", lr=1.0, momentum=0.5))
    opt.step(p, {"w": np.array([1.0])})
    opt.step(p, {"w": np.array([1.0])})
    assert p["w"][0] == pytest.approx(-(1.0 + 1.5))


def test_optimizer_config_validation():
    with pytest.raises(ConfigError):
        nn.OptimizerConfig(lr=-1e-3)
    with pytest.raises(ConfigError):
        nn.OptimizerConfig("RMSProp")
    with pytest.raises(ConfigError):
        nn.OptimizerConfig(momentum=1.0)
    # lr = 0 is the null optimizer
    p = {"w": np.array([3.0])}
    nn.Optimizer(nn.OptimizerConfig("Adam", lr=0.0)).step(p, {"w": np.array([5.0])})
    assert p["w"][0] == 3.0


def test_toy_model_loss_strictly_decreases():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((32, 5))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    model = Sequential([L.dense(8), L.relu(), L.dense(2)], (5,), rng)
    opt = nn.Optimizer(nn.OptimizerConfig("SGD", lr=0.05))
    params = {f"{n}.{k}": v for n, layer in model.named_layers() for k, v in layer.params.items()}
    losses = []
    for _ in range(6):
        loss, grad = nn.cross_entropy(nn.softmax(model.forward(x, Mode.TRAIN)), y)
        losses.append(loss)
        model.backward(grad)
        grads = {f"{n}.{k}": v for n, layer in model.named_layers() for k, v in layer.grads.items()}
        opt.step(params, grads)
    assert all(b < a for a, b in zip(losses, losses[1:]))
