"""Network primitives: gradient correctness against central finite differences."""

import numpy as np
import pytest

from qmridesign.nets import Adam, Mlp, log_softmax, orthogonal, softmax


def test_orthogonal_rows_orthonormal():
    rng = np.random.default_rng(0)
    w = orthogonal(rng, 4, 12, gain=1.0)
    np.testing.assert_allclose(w @ w.T, np.eye(4), atol=1e-12)
    w2 = orthogonal(rng, 12, 4, gain=2.0)
    np.testing.assert_allclose(w2.T @ w2, 4.0 * np.eye(4), atol=1e-12)


def test_softmax_normalized():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(7, 11)) * 30.0
    p = softmax(logits)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p >= 0)
    np.testing.assert_allclose(np.log(p), log_softmax(logits), atol=1e-12)


def flatten_params(mlp):
    return np.concatenate([p.ravel() for p in mlp.parameters])


def set_flat(mlp, flat):
    offset = 0
    for p in mlp.parameters:
        p[...] = flat[offset : offset + p.size].reshape(p.shape)
        offset += p.size


def test_backward_matches_finite_differences():
    """Scalar loss sum(out^2): analytic grads vs central differences, 1e-7."""
    rng = np.random.default_rng(2)
    mlp = Mlp((5, 4, 4, 3), rng, out_gain=0.7)
    x = rng.normal(size=(6, 5))

    def loss_of(flat):
        set_flat(mlp, flat)
        out, _ = mlp.forward(x)
        return float((out**2).sum())

    flat0 = flatten_params(mlp)
    out, cache = mlp.forward(x)
    grads = mlp.backward(cache, 2.0 * out)
    analytic = np.concatenate([g.ravel() for g in grads])

    numeric = np.empty_like(flat0)
    h = 1e-6
    for i in range(len(flat0)):
        up, down = flat0.copy(), flat0.copy()
        up[i] += h
        down[i] -= h
        numeric[i] = (loss_of(up) - loss_of(down)) / (2.0 * h)
    set_flat(mlp, flat0)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_backward_batch_is_sum_of_singles():
    rng = np.random.default_rng(3)
    mlp = Mlp((4, 3, 2), rng)
    x = rng.normal(size=(5, 4))
    grad_out = rng.normal(size=(5, 2))
    _, cache = mlp.forward(x)
    batch = mlp.backward(cache, grad_out)
    acc = [np.zeros_like(g) for g in batch]
    for i in range(5):
        _, cache_i = mlp.forward(x[i : i + 1])
        for j, g in enumerate(mlp.backward(cache_i, grad_out[i : i + 1])):
            acc[j] += g
    for got, expected in zip(batch, acc):
        np.testing.assert_allclose(got, expected, rtol=1e-12)


def test_state_roundtrip():
    rng = np.random.default_rng(4)
    a = Mlp((3, 4, 2), rng)
    b = Mlp((3, 4, 2), np.random.default_rng(99))
    b.set_state(a.get_state())
    x = rng.normal(size=(2, 3))
    np.testing.assert_array_equal(a(x), b(x))
    with pytest.raises(ValueError):
        b.set_state(a.get_state()[:-1])


def test_adam_matches_reference_formula():
    """One step against the textbook bias-corrected update."""
    p = np.array([1.0, -2.0])
    g = np.array([0.5, 0.25])
    opt = Adam([p], lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-5)
    opt.step([g])
    m = 0.1 * g
    v = 0.001 * g**2
    expected = np.array([1.0, -2.0]) - 1e-2 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-5)
    np.testing.assert_allclose(p, expected, rtol=1e-12)


def test_adam_descends_quadratic():
    rng = np.random.default_rng(5)
    p = rng.normal(size=(8,)) * 3.0
    opt = Adam([p], lr=0.05)
    for _ in range(800):
        opt.step([2.0 * p])
    assert float(np.abs(p).max()) < 1e-2
