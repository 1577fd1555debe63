import math

import numpy as np
import pytest

from gradcheck import BOX, gradient_check
from neuralenvelope.geometry import Box
from neuralenvelope.neural import (
    AdamState, Encoding, Mlp, adam_step, cross_entropy, dumps_model, encode, forward, init,
    loads_model, loss_and_grad, make_model, softmax,
)


def test_encode_examples():
    assert encode((1, 1), Encoding("none"), Box((0, 0), (2, 2))).tolist() == [[0.0, 0.0]]
    f = encode((1, 1), Encoding("fourier", 1), Box((0, 0), (2, 2)))[0]
    # [u1, u2, sin u1, sin u2, cos u1, cos u2] at u = 0
    np.testing.assert_allclose(f, [0, 0, 0, 0, 1, 1], atol=1e-15)
    assert encode(np.zeros((3, 2)), Encoding("fourier", 4), BOX).shape == (3, 18)
    assert Encoding("fourier", 4).out_dim(2) == 18


def test_normalize_clamps_outside_points():
    assert encode((5, -5), Encoding("none"), BOX).tolist() == [[1.0, -1.0]]


def test_forward_trivial_models():
    m = Mlp([2, 3], Encoding("none"), BOX, [np.zeros((2, 3))], [np.array([1.0, 2.0, 3.0])])
    assert forward(m, (0.3, 0.7)).tolist() == [1.0, 2.0, 3.0]
    ident = Mlp([2, 2], Encoding("none"), BOX, [np.eye(2)], [np.zeros(2)])
    np.testing.assert_allclose(forward(ident, (0.75, 0.25)), [0.5, -0.5])


def test_forward_matches_straight_line_version():
    m = make_model(2, (16, 8), 5, Encoding("fourier", 3), BOX, seed=4)
    x = np.random.default_rng(0).random((50, 2))
    a = encode(x, m.encoding, BOX)
    h1 = np.maximum(a @ m.weights[0] + m.biases[0], 0)
    h2 = np.maximum(h1 @ m.weights[1] + m.biases[1], 0)
    ref = h2 @ m.weights[2] + m.biases[2]
    np.testing.assert_allclose(forward(m, x), ref, atol=1e-12)


def test_loss_stability_and_uniform_value():
    assert cross_entropy(np.array([[1000.0, 0.0]]), np.array([0]))[0] == pytest.approx(0.0, abs=1e-300)
    assert np.isfinite(cross_entropy(np.array([[0.0, 1000.0]]), np.array([0]))[0])
    for c in (2, 5, 17):
        assert cross_entropy(np.zeros((1, c)), np.array([0]))[0] == pytest.approx(math.log(c))


def test_loss_and_grad_errors():
    m = make_model(2, (4,), 3, Encoding("none"), BOX, seed=0)
    with pytest.raises(ValueError):
        loss_and_grad(m, np.zeros((1, 2)), np.array([3]))
    with pytest.raises(ValueError):
        loss_and_grad(m, np.zeros((0, 2)), np.array([], dtype=int))


def test_gradient_finite_differences():
    assert gradient_check((16,), Encoding("none"), seed=1) <= 1e-4
    assert gradient_check((16, 16), Encoding("fourier", 2), seed=2, batches=3) <= 1e-4


def test_adam_zero_grad_and_first_step():
    m = make_model(2, (8,), 3, Encoding("none"), BOX, seed=1)
    before = [p.copy() for p in m.params()]
    st = AdamState.for_model(m)
    adam_step(m, st, [np.zeros_like(p) for p in m.params()])
    assert st.t == 1
    for a, b in zip(before, m.params()):
        np.testing.assert_array_equal(a, b)
    m2 = make_model(2, (8,), 3, Encoding("none"), BOX, seed=1)
    st2 = AdamState.for_model(m2)
    g = [np.random.default_rng(i).normal(size=p.shape) for i, p in enumerate(m2.params())]
    ref = [p.copy() for p in m2.params()]
    adam_step(m2, st2, g)
    for r, p, gi in zip(ref, m2.params(), g):
        np.testing.assert_allclose(p - r, -1e-3 * np.sign(gi), rtol=1e-4)


def test_adam_toy_training_reduces_loss():
    m = make_model(2, (16,), 2, Encoding("fourier", 2), BOX, seed=3)
    x = np.array([[0.2, 0.2], [0.8, 0.8]])
    y = np.array([0, 1])
    st = AdamState.for_model(m)
    first, _ = loss_and_grad(m, x, y)
    for _ in range(200):
        loss, g = loss_and_grad(m, x, y)
        adam_step(m, st, g)
    assert loss_and_grad(m, x, y)[0] < first


def test_init_statistics_and_determinism():
    enc = Encoding("none")
    region = Box((0,) * 256, (1,) * 256)
    m = init([256, 256, 4], enc, seed=7, region=region)
    assert np.var(m.weights[0]) == pytest.approx(2 / 256, rel=0.2)
    assert all(np.all(b == 0) for b in m.biases)
    again = init([256, 256, 4], enc, seed=7, region=region)
    for a, b in zip(m.params(), again.params()):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        init([3, 4], enc, seed=0, region=BOX)


def test_model_file_round_trip_bit_exact():
    m = make_model(2, (16, 16), 7, Encoding("fourier", 3, 0.5), BOX, seed=11, node_id=4)
    back = loads_model(dumps_model(m))
    assert back.widths == m.widths and back.encoding == m.encoding and back.node_id == 4
    for a, b in zip(m.params(), back.params()):
        assert a.tobytes() == b.tobytes()
    assert dumps_model(back) == dumps_model(m)


def test_softmax_properties_and_translation_invariance():
    logits = np.random.default_rng(0).normal(scale=30, size=(200, 9))
    p = softmax(logits)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(p.argmax(axis=1), logits.argmax(axis=1))
    np.testing.assert_array_equal(softmax(logits + 123.0).argmax(axis=1), logits.argmax(axis=1))
    assert np.all(cross_entropy(logits, logits.argmax(axis=1)) >= 0)
