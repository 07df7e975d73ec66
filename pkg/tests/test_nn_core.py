import numpy as np
import pytest

from models.nn_core import (Activation, AdamState, DenseLayer, MlpParams, adam_step, cosine_lr, grad_check, l1_loss,
                            mlp_backward, mlp_forward)

def linear(weights, bias):
    return MlpParams([DenseLayer(np.array(weights, dtype=float), np.array(bias, dtype=float))])

def test_identity_layer():
    out, _ = mlp_forward(linear(np.eye(2), [0, 0]), np.array([1.0, 2.0]))
    assert np.array_equal(out, [1.0, 2.0])

def test_constant_net():
    out, _ = mlp_forward(linear(np.zeros((1, 3)), [0.5]), np.array([4.0, -2.0, 7.0]))
    assert np.array_equal(out, [0.5])

def test_two_layer_matches_hand_chain(rng):
    params = MlpParams.init([3, 5, 2], rng)
    x = rng.normal(size=3)
    l1, l2 = params.layers
    expected = l2.weights @ np.maximum(l1.weights @ x + l1.bias, 0.0) + l2.bias
    out, _ = mlp_forward(params, x)
    assert np.allclose(out, expected, rtol=0, atol=1e-14)

def test_batch_and_vector_inputs_agree(rng):
    params = MlpParams.init([4, 6, 3], rng, Activation.GELU)
    x = rng.normal(size=(5, 4))
    batch, _ = mlp_forward(params, x)
    single, _ = mlp_forward(params, x[2])
    assert batch.shape == (5, 3)
    assert np.allclose(batch[2], single, atol=1e-14)

def test_input_width_mismatch(rng):
    params = MlpParams.init([4, 3], rng)
    with pytest.raises(ValueError, match='input dim 4'):
        mlp_forward(params, np.zeros(5))

def test_layer_chain_mismatch():
    with pytest.raises(ValueError):
        MlpParams([DenseLayer(np.zeros((3, 2)), np.zeros(3)), DenseLayer(np.zeros((1, 4)), np.zeros(1))])

def test_same_seed_same_init():
    a = MlpParams.init([8, 16, 4], np.random.default_rng(3))
    b = MlpParams.init([8, 16, 4], np.random.default_rng(3))
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    limit = np.sqrt(6.0 / (8 + 16))
    assert np.all(np.abs(a.layers[0].weights) <= limit)
    assert np.all(a.layers[0].bias == 0)

def test_linear_sum_gradient():
    x = np.array([1.0, -2.0, 3.0])
    params = linear(np.ones((2, 3)), [0.0, 0.0])
    _, cache = mlp_forward(params, x)
    grads = mlp_backward(params, cache, np.ones(2))
    assert np.array_equal(grads.layers[0].weights, np.outer(np.ones(2), x))
    assert np.array_equal(grads.layers[0].bias, np.ones(2))

def test_exact_fit_gives_zero_gradients(rng):
    params = MlpParams.init([3, 4, 2], rng)
    x = rng.normal(size=(2, 3))
    out, cache = mlp_forward(params, x)
    value, grad = l1_loss(out, out.copy())
    assert value == 0.0
    grads = mlp_backward(params, cache, grad)
    assert all(np.all(g == 0) for g in grads.arrays())

def test_stale_cache_rejected(rng):
    params = MlpParams.init([3, 4, 2], rng)
    _, cache = mlp_forward(MlpParams.init([3, 5, 2], rng), np.zeros(3))
    with pytest.raises(RuntimeError):
        mlp_backward(params, cache, np.zeros(2))

@pytest.mark.parametrize('dims,activation', [
    ([5, 3], Activation.RELU),
    ([6, 8, 4], Activation.RELU),
    ([7, 16, 16], Activation.GELU),
    ([16, 12, 3], Activation.GELU),
])
def test_gradients_match_finite_differences(dims, activation):
    rng = np.random.default_rng(sum(dims))
    params = MlpParams.init(dims, rng, activation)
    x = rng.normal(size=(3, dims[0]))
    target = rng.normal(size=(3, dims[-1]))

    def loss_fn(p):
        out, cache = mlp_forward(p, x)
        diff = out - target
        return 0.5 * float(np.sum(diff * diff)), mlp_backward(p, cache, diff)

    report = grad_check(params, loss_fn)
    assert report.passed, report.per_parameter
    assert set(report.per_parameter) == set(params.named_arrays())

def test_l1_loss_hand_value():
    value, grad = l1_loss(np.array([1.0, 3.0]), np.array([0.0, 1.0]))
    assert value == 1.5
    assert np.array_equal(grad, [0.5, 0.5])

def test_l1_loss_matches_elementwise_mean(rng):
    a, b = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    value, _ = l1_loss(a, b)
    assert value == pytest.approx(sum(abs(x - y) for x, y in zip(a.ravel(), b.ravel())) / 24, abs=1e-14)

def test_adam_zero_gradient_keeps_params(rng):
    params = MlpParams.init([3, 2], rng)
    updated, state = adam_step(params, params.zeros_like(), AdamState.for_params(params), 0.1)
    assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), updated.arrays()))
    assert state.step_count == 1

def test_adam_first_step_is_lr_times_sign(rng):
    params = MlpParams.init([3, 2], rng)
    grads = params.with_arrays([np.full_like(a, -2.5) for a in params.arrays()])
    updated, _ = adam_step(params, grads, AdamState.for_params(params), 0.01)
    for before, after in zip(params.arrays(), updated.arrays()):
        assert np.allclose(after - before, 0.01, atol=1e-8)

def test_adam_descends_on_square():
    params = linear([[1.0]], [0.0])
    state = AdamState.for_params(params)
    previous = 1.0
    for _ in range(3):
        w = params.layers[0].weights[0, 0]
        grads = params.with_arrays([np.array([[2.0 * w]]), np.zeros(1)])
        params, state = adam_step(params, grads, state, 0.1)
        assert params.layers[0].weights[0, 0] < previous
        previous = params.layers[0].weights[0, 0]

def test_adam_rejects_non_finite_gradient(rng):
    params = MlpParams.init([3, 2], rng)
    arrays = [np.zeros_like(a) for a in params.arrays()]
    arrays[0][0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        adam_step(params, params.with_arrays(arrays), AdamState.for_params(params), 0.1)

def test_cosine_schedule():
    assert cosine_lr(1e-3, 0, 10) == 1e-3
    assert cosine_lr(1e-3, 5, 10) == pytest.approx(5e-4)
    rates = [cosine_lr(1e-3, e, 10) for e in range(10)]
    assert all(b <= a for a, b in zip(rates, rates[1:]))
    assert rates[-1] > 0

def test_cosine_rejects_out_of_range_epoch():
    with pytest.raises(ValueError):
        cosine_lr(1e-3, 10, 10)
