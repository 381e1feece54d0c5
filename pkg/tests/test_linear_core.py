import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tacle.linear_core import (
    LinearModel,
    SgdConfig,
    backward_weighted_ce,
    cross_entropy,
    forward,
    max_relative_error,
    numerical_gradient,
    sgd_step,
    softmax,
    weighted_ce,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_softmax_uniform():
    np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3)


def test_softmax_two_values():
    # e^1/(e^1+e^2) = 1/(1+e)
    np.testing.assert_allclose(softmax([1.0, 2.0]), [0.26894, 0.73106], atol=1e-5)


def test_softmax_empty():
    with pytest.raises(ValueError):
        softmax([])


@settings(max_examples=200)
@given(arrays(float, st.integers(1, 64), elements=finite), st.floats(-100, 100))
def test_softmax_sums_to_one_and_shift_invariant(v, c):
    p = softmax(v)
    assert abs(p.sum() - 1) < 1e-9
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_allclose(softmax(v + c), p, atol=1e-12)


def test_softmax_large_logits_stable():
    p = softmax([1000.0, 1000.0])
    np.testing.assert_allclose(p, [0.5, 0.5])


def test_cross_entropy_examples():
    assert cross_entropy([0.0, 1.0, 0.0], 1) == 0.0
    assert cross_entropy(np.full(7, 1 / 7), 3) == pytest.approx(math.log(7))
    assert cross_entropy([0.25, 0.75], 0) == pytest.approx(1.38629, abs=1e-5)


def test_cross_entropy_clamps_zero_probability():
    assert cross_entropy([1.0, 0.0], 1) == pytest.approx(-math.log(1e-12))


def test_cross_entropy_bad_index():
    with pytest.raises(ValueError):
        cross_entropy([0.5, 0.5], 2)
    with pytest.raises(ValueError):
        cross_entropy([0.5, 0.5], -1)


@given(arrays(float, st.integers(1, 16), elements=finite), st.data())
def test_cross_entropy_nonnegative(v, data):
    p = softmax(v)
    k = data.draw(st.integers(0, len(p) - 1))
    ce = cross_entropy(p, k)
    assert ce >= 0
    assert (ce == 0) == (p[k] == 1.0)


# ----------------------------------------------------------------------- forward


def test_forward_zero_head_uniform():
    m = LinearModel.identity(3)
    m.add_head(4)
    _, p = forward(m, [0.3, -1.0, 2.0])
    np.testing.assert_allclose(p, 0.25)


def test_forward_identity_head():
    m = LinearModel.identity(2)
    m.add_head(2)
    m.heads[0].weight[:] = np.eye(2)
    _, p = forward(m, [1.0, 0.0])
    e = math.e
    np.testing.assert_allclose(p, [e / (e + 1), 1 / (e + 1)])


def test_forward_concatenates_heads():
    m = LinearModel.identity(3)
    m.add_head(2)
    m.add_head(2)
    logits, p = forward(m, np.ones(3))
    assert logits.shape == (4,)
    _, p_last = forward(m, np.ones(3), heads=[1])
    assert p_last.shape == (2,)
    assert m.class_order() == [0, 1, 2, 3]


def test_forward_dimension_mismatch():
    m = LinearModel.identity(3)
    m.add_head(2)
    with pytest.raises(ValueError):
        forward(m, np.ones(4))


def test_overlapping_head_classes_rejected():
    m = LinearModel.identity(2)
    m.add_head([5, 6])
    with pytest.raises(ValueError):
        m.add_head([6, 7])


# --------------------------------------------------------------------- gradients


def random_model(rng, d=None, activation=None, n_heads=None):
    d = d or int(rng.integers(1, 9))
    activation = activation or ("tanh" if rng.random() < 0.5 else "identity")
    m = LinearModel(rng.normal(size=(d, d)) * 0.7, rng.normal(size=d) * 0.3, activation)
    n_heads = n_heads or int(rng.integers(1, 4))
    total = 0
    for _ in range(n_heads):
        k = int(rng.integers(1, 3))
        if total + k > 6:
            break
        m.add_head(k, init_scale=0.8, rng=rng)
        m.heads[-1].bias[:] = rng.normal(size=k)
        total += k
    return m


def weighted_loss_oracle(model, x, y, w, heads=None):
    """Mean weighted CE built from forward + cross_entropy only."""
    total = 0.0
    for xi, yi, wi in zip(x, y, w):
        _, p = forward(model, xi, heads)
        total += wi * cross_entropy(p, yi)
    return total / len(y)


def test_zero_weights_zero_gradient():
    rng = np.random.default_rng(0)
    m = random_model(rng, d=4)
    x = rng.normal(size=(5, 4))
    y = rng.integers(0, m.num_classes, 5)
    grads = backward_weighted_ce(m, x, y, np.zeros(5))
    assert all(np.all(g == 0) for g in grads.values())


def test_gradient_linear_in_weight():
    rng = np.random.default_rng(1)
    m = random_model(rng, d=3)
    x = rng.normal(size=(1, 3))
    y = [0]
    g1 = backward_weighted_ce(m, x, y, [1.0])
    g2 = backward_weighted_ce(m, x, y, [2.0])
    for k in g1:
        np.testing.assert_array_equal(g2[k], 2 * g1[k])


def test_negative_weights_rejected():
    m = LinearModel.identity(2)
    m.add_head(2)
    with pytest.raises(ValueError):
        backward_weighted_ce(m, np.ones((1, 2)), [0], [-1.0])


@pytest.mark.parametrize("seed", range(100))
def test_weighted_ce_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng)
    x = rng.normal(size=(5, m.input_dim))
    y = rng.integers(0, m.num_classes, 5)
    w = rng.uniform(0, 2, 5)
    analytic = backward_weighted_ce(m, x, y, w)
    numeric = numerical_gradient(lambda: weighted_loss_oracle(m, x, y, w), m.parameters())
    assert max_relative_error(analytic, numeric) < 1e-4


def test_frozen_feature_layer_gets_no_gradient():
    rng = np.random.default_rng(3)
    m = random_model(rng, d=3, n_heads=2)
    m.feature_trainable = False
    grads = backward_weighted_ce(m, rng.normal(size=(4, 3)), [0, 0, 0, 0], np.ones(4))
    assert not any(k.startswith("feature.") for k in grads)


def test_train_heads_subset():
    rng = np.random.default_rng(4)
    m = random_model(rng, d=3, n_heads=3)
    last = len(m.heads) - 1
    _, grads = weighted_ce(m, rng.normal(size=(4, 3)), [0] * 4, np.ones(4), train_heads=[last])
    heads = {k.split(".")[1] for k in grads if k.startswith("head.")}
    assert heads == {str(last)}


# --------------------------------------------------------------------- optimizer


def test_sgd_zero_grad_is_noop():
    p = {"head.0.weight": np.array([[1.0, -2.0]])}
    sgd_step(p, {"head.0.weight": np.zeros((1, 2))}, {}, SgdConfig(0.1, 0.9, 0.0))
    np.testing.assert_array_equal(p["head.0.weight"], [[1.0, -2.0]])


def test_sgd_plain_step():
    p = {"w.weight": np.array([1.0, 1.0])}
    g = np.array([0.5, -1.0])
    sgd_step(p, {"w.weight": g}, {}, SgdConfig(0.1, 0.0, 0.0))
    np.testing.assert_allclose(p["w.weight"], [1.0 - 0.05, 1.0 + 0.1])


def test_sgd_momentum_second_step():
    cfg = SgdConfig(0.01, 0.9, 0.0)
    p = {"w.weight": np.zeros(3)}
    v = {}
    g = np.array([1.0, -2.0, 0.5])
    sgd_step(p, {"w.weight": g}, v, cfg)
    before = p["w.weight"].copy()
    sgd_step(p, {"w.weight": g}, v, cfg)
    np.testing.assert_allclose(before - p["w.weight"], 0.01 * 1.9 * g)


def test_sgd_weight_decay_skips_bias():
    cfg = SgdConfig(0.1, 0.0, 0.5)
    p = {"h.weight": np.array([2.0]), "h.bias": np.array([2.0])}
    sgd_step(p, {"h.weight": np.zeros(1), "h.bias": np.zeros(1)}, {}, cfg)
    assert p["h.weight"][0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)
    assert p["h.bias"][0] == 2.0


def test_sgd_shape_mismatch():
    with pytest.raises(ValueError):
        sgd_step({"a.weight": np.zeros(2)}, {"a.weight": np.zeros(3)}, {}, SgdConfig())


@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite))
def test_sgd_zero_lr_identity(p0, g):
    # lr must be > 0 in the config; the per-call override allows exactly 0
    p = {"x.weight": p0.copy()}
    sgd_step(p, {"x.weight": g}, {}, SgdConfig(), lr=0.0)
    np.testing.assert_array_equal(p["x.weight"], p0)


def test_sgd_config_validation():
    with pytest.raises(ValueError):
        SgdConfig(learning_rate=0)
    with pytest.raises(ValueError):
        SgdConfig(momentum=1.0)
    with pytest.raises(ValueError):
        SgdConfig(weight_decay=-1)
