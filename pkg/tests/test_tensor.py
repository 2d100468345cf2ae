import numpy as np
import pytest

from arnet.tensor import (
    LSTMParams,
    ShapeError,
    Tensor,
    avg_pool2d,
    concat,
    conv2d,
    global_avg_pool,
    linear,
    log_softmax,
    lstm_step,
    softmax,
    softmax_cross_entropy,
    stack,
)
from gradcheck import TOL, check

SEEDS = range(10)


def project(out, seed=99):
    """Reduce any tensor to a scalar with fixed random weights, so every entry matters."""
    r = np.random.default_rng(seed).normal(size=out.shape)
    return (out * r).sum()


# name -> (builder, input shapes, how to draw inputs)
def _positive(rng, shape):
    return rng.uniform(0.5, 2.0, shape)


def _away_from_zero(rng, shape):
    return rng.choice([-1.0, 1.0], shape) * rng.uniform(0.1, 1.0, shape)


UNARY = {
    "neg": lambda x: -x,
    "exp": lambda x: x.exp(),
    "tanh": lambda x: x.tanh(),
    "sigmoid": lambda x: x.sigmoid(),
    "pow3": lambda x: x**3,
    "sum_axis0": lambda x: x.sum(axis=0),
    "mean_axis1_keep": lambda x: x.mean(axis=1, keepdims=True),
    "reshape": lambda x: x.reshape(-1),
    "getitem": lambda x: x[1:, ::2],
    "fancy_index": lambda x: x[[0, 0, 2]],
    "softmax": lambda x: softmax(x),
    "log_softmax": lambda x: log_softmax(x, axis=0),
}


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name, seed):
    rng = np.random.default_rng(seed)
    fn = UNARY[name]
    assert check(lambda x: project(fn(x)), rng.normal(size=(3, 4))) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_log_and_relu_gradients(seed):
    rng = np.random.default_rng(seed)
    assert check(lambda x: project(x.log()), _positive(rng, (3, 4))) < TOL
    assert check(lambda x: project(x.relu()), _away_from_zero(rng, (3, 4))) < TOL
    assert check(lambda x: project(x**0.5), _positive(rng, (5,))) < TOL


BINARY = {
    "add_broadcast": (lambda a, b: a + b, (3, 4), (4,)),
    "sub_broadcast": (lambda a, b: a - b, (3, 1), (1, 4)),
    "mul_broadcast": (lambda a, b: a * b, (2, 3, 4), (3, 1)),
    "matmul": (lambda a, b: a @ b, (3, 4), (4, 5)),
    "matmul_vec": (lambda a, b: a @ b, (4,), (4, 2)),
    "stack": (lambda a, b: stack([a, b], axis=1), (3, 2), (3, 2)),
    "concat": (lambda a, b: concat([a, b], axis=0), (2, 3), (4, 3)),
}


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients(name, seed):
    rng = np.random.default_rng(seed)
    fn, sa, sb = BINARY[name]
    assert check(lambda a, b: project(fn(a, b)), rng.normal(size=sa), rng.normal(size=sb)) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_division_gradients(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 4)), _positive(rng, (4,))
    assert check(lambda a, b: project(a / b), a, b) < TOL
    assert check(lambda b: project(2.0 / b), b) < TOL
    assert check(lambda a: project(1.0 - a), a) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_linear_gradients(seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(5, 3)), rng.normal(size=(3, 4)), rng.normal(size=4)
    assert check(lambda x, w, b: project(linear(x, w, b)), x, w, b) < TOL


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_gradients(seed, stride, padding):
    rng = np.random.default_rng(seed)
    x, k, b = rng.normal(size=(2, 2, 6, 6)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    err = check(lambda x, k, b: project(conv2d(x, k, b, stride=stride, padding=padding)), x, k, b)
    assert err < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_pool_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 4, 4))
    assert check(lambda x: project(avg_pool2d(x, 2)), x) < TOL
    assert check(lambda x: project(global_avg_pool(x)), x) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_lstm_step_gradients(seed):
    rng = np.random.default_rng(seed)
    d, k = 3, 4
    arrays = [
        rng.normal(size=d),
        rng.normal(size=k),
        rng.normal(size=k),
        rng.normal(scale=0.5, size=(d, 4 * k)),
        rng.normal(scale=0.5, size=(k, 4 * k)),
        rng.normal(scale=0.5, size=4 * k),
    ]

    def build(x, h, c, wi, wh, b):
        h2, c2 = lstm_step(x, h, c, LSTMParams(wi, wh, b))
        return project(h2, 1) + project(c2, 2)

    assert check(build, *arrays) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_cross_entropy_gradients(seed):
    rng = np.random.default_rng(seed)
    assert check(lambda z: softmax_cross_entropy(z, 2), rng.normal(size=5)) < TOL
    labels = rng.integers(0, 4, size=3)
    assert check(lambda z: softmax_cross_entropy(z, labels), rng.normal(size=(3, 4))) < TOL


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = x * x + x
    y.sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


# -- forward oracles ------------------------------------------------------------


def naive_conv(x, k, b, stride, padding):
    n, c, h, w = x.shape
    o, _, kk, _ = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kk) // stride + 1
    wo = (w + 2 * padding - kk) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for a in range(n):
        for f in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[a, :, i * stride : i * stride + kk, j * stride : j * stride + kk]
                    out[a, f, i, j] = (patch * k[f]).sum() + b[f]
    return out


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (3, 2)])
def test_conv2d_matches_loop_oracle(rng, stride, padding):
    x, k, b = rng.normal(size=(2, 3, 7, 7)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    got = conv2d(Tensor(x), Tensor(k), Tensor(b), stride=stride, padding=padding).data
    np.testing.assert_allclose(got, naive_conv(x, k, b, stride, padding), rtol=1e-12, atol=1e-12)


def test_avg_pool_matches_block_means(rng):
    x = rng.normal(size=(1, 1, 4, 6))
    got = avg_pool2d(Tensor(x), 2).data
    assert got.shape == (1, 1, 2, 3)
    assert got[0, 0, 1, 2] == pytest.approx(x[0, 0, 2:4, 4:6].mean())


def test_lstm_matches_reference_equations(rng):
    d, k = 3, 2
    x, h, c = rng.normal(size=d), rng.normal(size=k), rng.normal(size=k)
    wi, wh, b = rng.normal(size=(d, 4 * k)), rng.normal(size=(k, 4 * k)), rng.normal(size=4 * k)
    h2, c2 = lstm_step(Tensor(x), Tensor(h), Tensor(c), LSTMParams(Tensor(wi), Tensor(wh), Tensor(b)))

    sig = lambda v: 1 / (1 + np.exp(-v))
    z = x @ wi + h @ wh + b
    i, f, g, o = sig(z[:k]), sig(z[k : 2 * k]), np.tanh(z[2 * k : 3 * k]), sig(z[3 * k :])
    c_ref = f * c + i * g
    np.testing.assert_allclose(c2.data, c_ref, rtol=1e-13)
    np.testing.assert_allclose(h2.data, o * np.tanh(c_ref), rtol=1e-13)


def test_cross_entropy_matches_log_softmax(rng):
    z = rng.normal(size=(4, 5))
    labels = np.array([0, 4, 2, 2])
    ref = -np.mean(np.log(np.exp(z) / np.exp(z).sum(1, keepdims=True))[np.arange(4), labels])
    assert softmax_cross_entropy(Tensor(z), labels).item() == pytest.approx(ref, rel=1e-13)


def test_cross_entropy_is_stable_for_large_logits():
    loss = softmax_cross_entropy(Tensor(np.array([1000.0, 0.0, -1000.0])), 0)
    assert np.isfinite(loss.item()) and loss.item() == pytest.approx(0.0, abs=1e-12)


def test_softmax_rows_sum_to_one(rng):
    p = softmax(Tensor(rng.normal(size=(3, 7)) * 50)).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-14)


# -- shape validation --------------------------------------------------------------


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


def test_pool_rejects_indivisible_size():
    with pytest.raises(ShapeError):
        avg_pool2d(Tensor(np.zeros((1, 1, 5, 5))), 2)


def test_lstm_rejects_bad_weights():
    k = 2
    with pytest.raises(ShapeError):
        lstm_step(Tensor(np.zeros(3)), Tensor(np.zeros(k)), Tensor(np.zeros(k)),
                  LSTMParams(Tensor(np.zeros((4, 8))), Tensor(np.zeros((2, 8))), Tensor(np.zeros(8))))


def test_cross_entropy_rejects_bad_label():
    with pytest.raises(ValueError):
        softmax_cross_entropy(Tensor(np.zeros(3)), 3)
    with pytest.raises(ValueError):
        softmax_cross_entropy(Tensor(np.zeros(3)), 1.5)
