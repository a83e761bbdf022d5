import numpy as np
import pytest

from kdlandmarks.regressor import (
    AdamState,
    MlpSpec,
    NonFiniteError,
    Regressor,
    adam_step,
    backward,
    forward,
    init_params,
    pack,
    unpack,
)


def test_spec_validation():
    with pytest.raises(ValueError, match="even"):
        MlpSpec(4, (3,), 3)
    with pytest.raises(ValueError, match=">= 1"):
        MlpSpec(0, (3,), 2)
    with pytest.raises(ValueError, match="activation"):
        MlpSpec(4, (3,), 2, activation="sigmoid")
    spec = MlpSpec(4, (3, 5), 2, activation=("relu", "tanh"), seed=7)
    assert MlpSpec.from_dict(spec.to_dict()) == spec
    assert spec.param_count() == 4 * 3 + 3 + 3 * 5 + 5 + 5 * 2 + 2


def test_init_params():
    spec = MlpSpec(10, (20, 6), 4, seed=3)
    p1, p2 = init_params(spec), init_params(spec)
    for (w1, b1), (w2, b2), fi, fo in zip(p1, p2, spec.dims[:-1], spec.dims[1:]):
        assert np.array_equal(w1, w2)
        assert np.all(b1 == 0)
        assert np.abs(w1).max() <= np.sqrt(6 / (fi + fo))
    other = init_params(MlpSpec(10, (20, 6), 4, seed=4))
    assert not np.array_equal(p1[0][0], other[0][0])


def test_forward_zero_and_identity():
    spec = MlpSpec(4, (3,), 2)
    zero = [(np.zeros_like(w), np.zeros_like(b)) for w, b in init_params(spec)]
    assert np.all(forward(zero, np.ones((5, 4)), spec.activations) == 0)
    x = np.arange(12.0).reshape(3, 4)
    ident = [(np.eye(4), np.zeros(4))]
    np.testing.assert_array_equal(forward(ident, x, ()), x)


def test_forward_batch_consistency(rng):
    spec = MlpSpec(6, (8, 5), 4, activation="tanh", seed=1)
    params = init_params(spec)
    x = rng.standard_normal((9, 6))
    batch = forward(params, x, spec.activations)
    rows = np.vstack([forward(params, x[i : i + 1], spec.activations) for i in range(9)])
    np.testing.assert_allclose(batch, rows, rtol=1e-13, atol=1e-15)


def test_forward_errors():
    spec = MlpSpec(4, (3,), 2)
    params = init_params(spec)
    with pytest.raises(ValueError, match="input_dim"):
        forward(params, np.zeros((2, 5)), spec.activations)
    huge = [(w * 1e300, b) for w, b in params]
    with np.errstate(all="ignore"), pytest.raises(NonFiniteError, match="layer"):
        forward(huge, np.full((1, 4), 1e300), spec.activations)


def test_backward_zero_upstream(rng):
    spec = MlpSpec(4, (3,), 2)
    params = init_params(spec)
    _, cache = forward(params, rng.standard_normal((5, 4)), spec.activations, return_cache=True)
    grads = backward(params, cache, np.zeros((5, 2)), spec.activations)
    assert all(np.all(g == 0) for pair in grads for g in pair)
    with pytest.raises(ValueError):
        backward(params, cache, np.zeros((5, 3)), spec.activations)


def test_backward_linear_least_squares(rng):
    x = rng.standard_normal((20, 3))
    y = rng.standard_normal((20, 2))
    w = rng.standard_normal((3, 2))
    b = rng.standard_normal(2)
    out, cache = forward([(w, b)], x, (), return_cache=True)
    # L = sum((xW + b - y)^2) / 2  ->  dW = X^T (XW + b - Y)
    (dw, db), = backward([(w, b)], cache, out - y, ())
    np.testing.assert_allclose(dw, x.T @ (x @ w + b - y), rtol=1e-12)
    np.testing.assert_allclose(db, (x @ w + b - y).sum(axis=0), rtol=1e-12)


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_backward_finite_differences(activation):
    # 4*5+5 + 5*4+4 = 49 parameters
    spec = MlpSpec(4, (5,), 4, activation=activation, seed=11)
    model = Regressor(spec)
    rng = np.random.default_rng(99)
    x = rng.standard_normal((6, 4))
    target = rng.standard_normal((6, 4))

    def loss(theta):
        out = forward(unpack(theta, spec.dims), x, spec.activations)
        return 0.5 * np.sum((out - target) ** 2)

    out, cache = model.forward(x)
    grad = model.backward(cache, out - target)
    theta = model.theta.copy()
    h = 1e-6
    checked = 0
    for i in rng.integers(0, theta.size, 100):
        e = np.zeros_like(theta)
        e[i] = h
        fd = (loss(theta + e) - loss(theta - e)) / (2 * h)
        if activation == "relu":
            z = forward(unpack(theta, spec.dims)[:1], x, ("relu",), return_cache=True)[1][1][0]
            if np.abs(z).min() < 1e-4:
                continue
        assert abs(grad[i] - fd) <= 1e-4 * max(abs(fd), 1e-2), (i, grad[i], fd)
        checked += 1
    assert checked >= 50


def test_pack_unpack_views():
    spec = MlpSpec(3, (4,), 2)
    params = init_params(spec)
    flat = pack(params)
    views = unpack(flat, spec.dims)
    for (w, b), (vw, vb) in zip(params, views):
        assert np.array_equal(w, vw) and np.array_equal(b, vb)
    flat[0] = 123.0
    assert views[0][0][0, 0] == 123.0
    with pytest.raises(ValueError):
        unpack(flat[:-1], spec.dims)


def test_adam_zero_gradient_is_noop():
    w = np.array([1.0, -2.0])
    state = AdamState()
    np.testing.assert_array_equal(adam_step(w, np.zeros(2), state), w)
    assert state.t == 1


@pytest.mark.parametrize("g", [5.0, -0.3, 1e-3])
def test_adam_first_step_moves_by_lr(g):
    state = AdamState()
    w = adam_step(np.array([0.0]), np.array([g]), state)
    assert w[0] == pytest.approx(-1e-3 * np.sign(g), rel=1e-4)


def test_adam_learning_rate_decay():
    state = AdamState(learning_rate=1.0, decay=0.5)
    assert state.current_lr() == 1.0
    state.t = 4
    assert state.current_lr() == pytest.approx(1 / 3)


def test_adam_scalar_quadratic():
    # at lr=1e-3 Adam moves at most ~lr per step, so 200 steps cannot cover
    # the distance 3; a larger step size is needed for this check
    state = AdamState(learning_rate=0.03)
    w = np.array([0.0])
    f = []
    for _ in range(200):
        w = adam_step(w, 2 * (w - 3), state)
        f.append(float((w[0] - 3) ** 2))
    assert np.all(np.diff(f[10:]) <= 0)
    assert abs(w[0] - 3) < 0.1


def test_adam_default_lr_step_bound():
    state = AdamState()
    w = np.array([0.0])
    for _ in range(200):
        w = adam_step(w, 2 * (w - 3), state)
    assert 0 < w[0] <= 200 * 1e-3 + 1e-9


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(np.zeros(3), np.zeros(2), AdamState())
    state = AdamState()
    adam_step(np.zeros(3), np.ones(3), state)
    with pytest.raises(ValueError):
        adam_step(np.zeros(2), np.ones(2), state)


def test_adam_state_round_trip():
    state = AdamState(learning_rate=0.01)
    adam_step(np.zeros(3), np.array([1.0, -2.0, 0.5]), state)
    back = AdamState.from_dict(state.to_dict())
    assert back.t == 1
    np.testing.assert_array_equal(back.m, state.m)
    np.testing.assert_array_equal(back.v, state.v)


def _train_linear(x, y, epochs, seed, batch=32):
    spec = MlpSpec(x.shape[1], (), y.shape[1], seed=seed)
    model = Regressor(spec)
    state = AdamState(learning_rate=0.01)
    order_rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for idx in np.array_split(order_rng.permutation(len(x)), max(1, len(x) // batch)):
            out, cache = model.forward(x[idx])
            model.step(model.backward(cache, 2 * (out - y[idx]) / idx.size), state)
    return model


def test_linear_regression_reaches_least_squares():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((200, 4))
    y = x @ rng.standard_normal((4, 2)) + 0.3 + 0.1 * rng.standard_normal((200, 2))
    xa = np.hstack([x, np.ones((200, 1))])
    coef = np.linalg.lstsq(xa, y, rcond=None)[0]
    best = np.mean((xa @ coef - y) ** 2)
    model = _train_linear(x, y, epochs=500, seed=0)
    assert np.mean((model.predict(x) - y) ** 2) <= 1.05 * best


def test_training_is_bit_deterministic():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((64, 3))
    y = rng.standard_normal((64, 2))
    a = _train_linear(x, y, epochs=5, seed=2)
    b = _train_linear(x, y, epochs=5, seed=2)
    assert np.array_equal(a.theta, b.theta)


def test_regressor_copy_and_theta():
    model = Regressor(MlpSpec(3, (4,), 2))
    clone = model.copy()
    clone.theta = clone.theta + 1.0
    assert not np.array_equal(clone.theta, model.theta)
    np.testing.assert_allclose(clone.params[0][0], model.params[0][0] + 1.0)
    assert model.predict_shapes(np.zeros((5, 3))).shape == (5, 1, 2)
    with pytest.raises(ValueError):
        Regressor(MlpSpec(3, (4,), 2), params=[(np.zeros((3, 4)), np.zeros(4))])
