import numpy as np
import pytest

from accelpo.optim import AdamState, adam_step, sgd_step


def test_sgd_examples():
    p = np.array([1.0, -2.0])
    np.testing.assert_array_equal(sgd_step(p, np.zeros(2), 0.5), p)
    np.testing.assert_array_equal(sgd_step(np.zeros(1), np.array([3.0]), 1.0), [3.0])
    g = np.array([0.3, -1.1])
    half = sgd_step(sgd_step(p, g, 0.05), g, 0.05)
    np.testing.assert_allclose(half, sgd_step(p, g, 0.1), atol=1e-15)


def test_adam_zero_gradient():
    delta, s = adam_step(AdamState.zeros((2, 3), lr=0.1), np.zeros((2, 3)))
    assert np.all(delta == 0)
    assert s.t == 1


def test_adam_first_step_is_signed_lr(rng):
    g = rng.normal(size=(4, 2))
    delta, _ = adam_step(AdamState.zeros(g.shape, lr=0.01), g)
    np.testing.assert_allclose(delta, 0.01 * np.sign(g), rtol=1e-6)


def test_adam_constant_gradient_displacement():
    s = AdamState.zeros((1,), lr=0.001)
    total = 0.0
    for _ in range(1000):
        delta, s = adam_step(s, np.array([2.5]))
        total += delta[0]
    assert abs(total - 1000 * 0.001) < 0.01 * 1000 * 0.001


def test_adam_step_bounded(rng):
    s = AdamState.zeros((50,), lr=0.01)
    for _ in range(200):
        delta, s = adam_step(s, rng.uniform(-1, 1, size=50))
        # bias-corrected |m_hat| / sqrt(v_hat) can exceed 1 only slightly for bounded gradients
        assert np.all(np.abs(delta) <= 0.01 * 3.5)
    assert np.all(s.v >= 0)


def test_adam_reference_values():
    # hand-rolled reference for two steps
    s = AdamState.zeros((1,), lr=0.1)
    d1, s = adam_step(s, np.array([1.0]))
    d2, s = adam_step(s, np.array([-2.0]))
    m = 0.9 * 0.1 * 1.0 + 0.1 * -2.0
    v = 0.999 * 0.001 * 1.0 + 0.001 * 4.0
    m_hat, v_hat = m / (1 - 0.9 ** 2), v / (1 - 0.999 ** 2)
    np.testing.assert_allclose(d2, [0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)], rtol=1e-12)


def test_adam_sign_equivariance(rng):
    a = b = AdamState.zeros((3, 3), lr=0.02)
    for _ in range(30):
        g = rng.normal(size=(3, 3))
        da, a = adam_step(a, g)
        db, b = adam_step(b, -g)
        np.testing.assert_array_equal(da, -db)


def test_optimizers_elementwise(rng):
    perm = rng.permutation(10)
    a = b = AdamState.zeros((10,), lr=0.05)
    p = rng.normal(size=10)
    for _ in range(20):
        g = rng.normal(size=10)
        da, a = adam_step(a, g)
        db, b = adam_step(b, g[perm])
        np.testing.assert_array_equal(da[perm], db)
        np.testing.assert_array_equal(sgd_step(p, g, 0.3)[perm], sgd_step(p[perm], g[perm], 0.3))


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros((2,)), np.zeros(3))
