from types import SimpleNamespace

import numpy as np
import pytest

from arnet import costs
from arnet.tensor import Tensor, log_softmax, softmax
from arnet.training import (
    LossWeights,
    SGD,
    loss_acc,
    loss_flops,
    loss_uni,
    reinforce_surrogate,
    sgd_momentum_step,
    soft_usage,
    total_loss,
)
from gradcheck import TOL, check

K = 7


def test_uni_is_zero_at_uniform_usage():
    assert loss_uni(np.full(K, 1 / K)).item() == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("hot", range(K))
def test_uni_for_one_hot_usage(hot):
    assert loss_uni(np.eye(K)[hot]).item() == pytest.approx(42 / 49, rel=1e-15)


def test_total_reduces_to_accuracy_loss():
    acc, flops, uni = Tensor(1.234), Tensor(56.7), Tensor(0.8)
    assert total_loss(acc, flops, uni, LossWeights(0.0, 0.0)).item() == 1.234


def test_total_is_linear_in_each_term(rng):
    w = LossWeights(0.1, 0.3)
    for _ in range(20):
        a, f, u, c = rng.normal(size=4)
        base = total_loss(a, f, u, w).item()
        assert total_loss(a + c, f, u, w).item() - base == pytest.approx(0.9 * c, abs=1e-12)
        assert total_loss(a, f + c, u, w).item() - base == pytest.approx(0.1 * c, abs=1e-12)
        assert total_loss(a, f, u + c, w).item() - base == pytest.approx(0.3 * c, abs=1e-12)
        assert total_loss(2 * a, 2 * f, 2 * u, w).item() == pytest.approx(2 * base, abs=1e-12)


def test_loss_weights_validated():
    with pytest.raises(ValueError):
        LossWeights(alpha=1.5)
    with pytest.raises(ValueError):
        LossWeights(beta=-0.1)


def _traces(z, frames=(3, 2)):
    """Fake routed videos whose policies are rows of softmax(z)."""
    pis = softmax(z)
    out, row = [], 0
    for n in frames:
        out.append(SimpleNamespace(policies=[pis[row + i] for i in range(n)], num_frames=n + 1))
        row += n
    return out


@pytest.mark.parametrize("seed", range(10))
def test_loss_term_gradients(seed):
    rng = np.random.default_rng(seed)
    table = costs.paper_table()
    z = rng.normal(size=(5, K))
    assert check(lambda z: loss_flops(_traces(z), table), z) < TOL
    assert check(lambda z: loss_uni(soft_usage(_traces(z))), z) < TOL
    assert check(lambda y: loss_acc(y, 3), rng.normal(size=6)) < TOL

    def combined(y, z):
        tr = _traces(z)
        return total_loss(loss_acc(y, 1), loss_flops(tr, table), loss_uni(soft_usage(tr)))

    assert check(combined, rng.normal(size=6), z) < TOL


@pytest.mark.parametrize("seed", range(10))
def test_reinforce_surrogate_gradient(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(4, K))
    chosen = rng.integers(0, K, size=4)
    adv = rng.normal()
    assert check(lambda z: reinforce_surrogate([log_softmax(z)[i, chosen[i]] for i in range(4)], adv), z) < TOL


def test_expected_flops_matches_hand_sum():
    table = costs.paper_table()
    pis = [Tensor(np.eye(K)[0]), Tensor(np.eye(K)[3]), Tensor(np.eye(K)[5])]
    got = costs.expected_flops(pis, table, num_frames=6).item()
    assert got == pytest.approx((table.level_cost(0) + table.level_cost(3)) / 6)


def test_sgd_momentum_matches_recurrence():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    grads = [np.array([0.5, 1.0]), np.array([-1.0, 0.25]), np.array([0.0, 2.0])]
    v, ref_p, ref_v = None, p.data.copy(), np.zeros(2)
    for g in grads:
        v = sgd_momentum_step([p], [g], lr=0.1, momentum=0.9, velocity=v)
        ref_v = 0.9 * ref_v + g
        ref_p = ref_p - 0.1 * ref_v
    np.testing.assert_allclose(p.data, ref_p, rtol=1e-15)


def test_sgd_skips_missing_gradients():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    opt = SGD({"a": a, "b": b}, lr=0.5)
    (a * 2.0).sum().backward()
    opt.step()
    np.testing.assert_array_equal(a.data, [0.0, 0.0])
    np.testing.assert_array_equal(b.data, [1.0, 1.0])


def test_sgd_rejects_non_finite_gradient():
    from arnet.training import DivergenceError

    p = Tensor(np.ones(1), requires_grad=True)
    with pytest.raises(DivergenceError):
        sgd_momentum_step([p], [np.array([np.nan])], lr=0.1)


def test_soft_usage_is_mean_policy(rng):
    z = rng.normal(size=(5, K))
    u = soft_usage(_traces(Tensor(z))).data
    np.testing.assert_allclose(u, softmax(Tensor(z)).data.mean(axis=0), rtol=1e-14)
    assert u.sum() == pytest.approx(1.0)
