"""Gradient checks for the autodiff engine against central finite differences."""

from __future__ import annotations

import numpy as np
import pytest

from unitrans import autodiff as ad
from unitrans.autodiff import Tensor


def finite_diff(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar fn at x. Independent oracle."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn()
        flat[i] = orig - eps
        dn = fn()
        flat[i] = orig
        gf[i] = (up - dn) / (2 * eps)
    return g


def assert_grads_match(build, arrays, eps=1e-6, rtol=1e-6, atol=1e-8):
    tensors = [ad.parameter(np.asarray(a, dtype=np.float64)) for a in arrays]
    loss = build(*tensors)
    loss.backward()

    def scalar():
        return build(*tensors).item()

    for t in tensors:
        num = finite_diff(scalar, t.data, eps)
        got = t.grad if t.grad is not None else np.zeros_like(t.data)
        np.testing.assert_allclose(got, num, rtol=rtol, atol=atol)


RNG = np.random.default_rng(0)


def test_add_mul_broadcast():
    a = RNG.normal(size=(3, 4))
    b = RNG.normal(size=(4,))
    assert_grads_match(lambda x, y: ((x * y + y) * 2.0).sum(), [a, b])


def test_sub_div_pow():
    a = RNG.normal(size=(5,)) + 3.0
    b = RNG.normal(size=(5,)) + 3.0
    assert_grads_match(lambda x, y: ((x - y) / y + x ** 2.5).sum(), [a, b],
                       rtol=1e-5)


def test_matmul_batched():
    a = RNG.normal(size=(2, 3, 4))
    b = RNG.normal(size=(4, 5))
    assert_grads_match(lambda x, y: (x @ y).sum(), [a, b])


def test_matmul_full_batch():
    a = RNG.normal(size=(2, 2, 3, 4))
    b = RNG.normal(size=(2, 2, 4, 3))
    assert_grads_match(lambda x, y: ((x @ y) ** 2.0).sum(), [a, b], rtol=1e-5)


def test_reshape_transpose_slice():
    a = RNG.normal(size=(4, 6))
    assert_grads_match(
        lambda x: (x.reshape(2, 12).transpose((1, 0))[3:7] ** 2.0).sum(), [a])


def test_reductions():
    a = RNG.normal(size=(3, 4, 5))
    assert_grads_match(lambda x: x.sum(axis=1).mean(), [a])
    assert_grads_match(lambda x: x.mean(axis=(0, 2), keepdims=True).sum(), [a])


def test_elementwise():
    a = RNG.normal(size=(7,)) * 0.5 + 2.0
    assert_grads_match(lambda x: (x.exp() + x.log() + x.tanh()).sum(), [a],
                       rtol=1e-5)


def test_gelu():
    a = RNG.normal(size=(11,)) * 2.0
    assert_grads_match(lambda x: x.gelu().sum(), [a], rtol=1e-5)


def test_softmax_and_log_softmax():
    a = RNG.normal(size=(3, 6))
    w = RNG.normal(size=(3, 6))
    assert_grads_match(lambda x: (ad.softmax(x) * w).sum(), [a], rtol=1e-5)
    assert_grads_match(lambda x: (ad.log_softmax(x) * w).sum(), [a], rtol=1e-5)


def test_softmax_masked_rows_exact_zero():
    scores = Tensor(RNG.normal(size=(2, 5)))
    valid = np.array([[True, True, False, False, True],
                      [True, False, True, False, False]])
    p = ad.softmax(ad.apply_mask(scores, valid))
    assert np.all(p.data[~valid] == 0.0)
    np.testing.assert_allclose(p.data.sum(axis=-1), 1.0, rtol=1e-12)


def test_apply_mask_grad_blocked():
    a = RNG.normal(size=(4, 4))
    valid = RNG.random((4, 4)) > 0.4
    w = RNG.normal(size=(4, 4))

    def build(x):
        return (ad.apply_mask(x, valid, fill=0.0) * w).sum()

    t = ad.parameter(a)
    build(t).backward()
    assert np.all(t.grad[~valid] == 0.0)
    np.testing.assert_allclose(t.grad[valid], w[valid])


def test_layer_norm():
    x = RNG.normal(size=(2, 3, 8))
    g = RNG.normal(size=(8,)) + 1.0
    b = RNG.normal(size=(8,))
    assert_grads_match(lambda a, c, d: (ad.layer_norm(a, c, d) ** 2.0).sum(),
                       [x, g, b], rtol=1e-5, atol=1e-7)


def test_embedding_scatter():
    table = RNG.normal(size=(10, 4))
    ids = np.array([[1, 3, 1], [0, 9, 3]])
    w = RNG.normal(size=(2, 3, 4))
    assert_grads_match(lambda t: (ad.embedding(t, ids) * w).sum(), [table])


def test_concat():
    a = RNG.normal(size=(2, 3))
    b = RNG.normal(size=(4, 3))
    assert_grads_match(lambda x, y: (ad.concat([x, y], axis=0) ** 2.0).sum(),
                       [a, b], rtol=1e-6)


def test_masked_nll_matches_manual():
    logits = RNG.normal(size=(6, 9))
    targets = RNG.integers(0, 9, size=6)
    weights = np.array([1, 0, 1, 1, 0, 1], dtype=float)
    assert_grads_match(lambda x: ad.masked_nll(x, targets, weights), [logits],
                       rtol=1e-5)
    # value against a direct computation
    t = Tensor(logits)
    val = ad.masked_nll(t, targets, weights).item()
    ref = 0.0
    for i in range(6):
        p = np.exp(logits[i] - logits[i].max())
        p /= p.sum()
        ref -= weights[i] * np.log(p[targets[i]])
    assert val == pytest.approx(ref, rel=1e-12)


def test_masked_nll_zero_weight_zero_grad():
    logits = ad.parameter(RNG.normal(size=(4, 5)))
    targets = np.array([0, 1, 2, 3])
    weights = np.array([1.0, 0.0, 1.0, 0.0])
    ad.masked_nll(logits, targets, weights).backward()
    assert np.all(logits.grad[1] == 0.0)
    assert np.all(logits.grad[3] == 0.0)
    assert np.any(logits.grad[0] != 0.0)


def test_dropout_train_and_off():
    x = ad.parameter(np.ones((1000,)))
    rng = np.random.default_rng(3)
    y = ad.dropout(x, 0.25, rng)
    kept = y.data != 0.0
    assert 0.68 < kept.mean() < 0.82
    np.testing.assert_allclose(y.data[kept], 1.0 / 0.75)
    assert ad.dropout(x, 0.0, rng) is x


def test_no_grad_builds_no_graph():
    x = ad.parameter(np.ones((3,)))
    with ad.no_grad():
        y = (x * 2.0).sum()
    assert y._prev == ()
    assert not y.requires_grad


def test_grad_accumulates_over_reuse():
    x = ad.parameter(np.array([2.0]))
    y = x * 3.0 + x * 4.0
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [7.0])
