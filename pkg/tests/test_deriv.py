import itertools
import math

import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from nspinn.deriv import (fd_table, fd_validate, jet2, jet_eval, jet_eval_batch, multi_indices,
                          param_gradient)
from nspinn.errors import NonFiniteError, ShapeError, UnsupportedOrderError
from nspinn.network import NetworkParams, build, combine, zeros

NEURON = NetworkParams((np.ones((1, 1)), np.ones((1, 1))), (np.zeros(1), np.zeros(1)))


def test_zero_net_has_bias_value_only():
    b = np.array([0.0, 0.0])
    net = zeros((3, 4, 2))
    net = NetworkParams(net.weights, net.biases[:-1] + (np.array([0.5, -2.0]),))
    t = jet_eval(net, np.array([0.1, 0.2, 0.3]), multi_indices(3, 4))
    np.testing.assert_array_equal(t[(0, 0, 0)], [0.5, -2.0])
    for a, v in t.items():
        if sum(a):
            np.testing.assert_array_equal(v, b)


def test_neuron_derivatives_at_zero():
    t = jet_eval(NEURON, np.zeros(1), [(1,), (2,), (3,)])
    assert t[(1,)][0] == 1.0
    assert t[(2,)][0] == 0.0
    assert t[(3,)][0] == pytest.approx(-2.0, abs=1e-15)


def test_order_cap_and_shapes():
    net = build((2, 3, 1), 0)
    with pytest.raises(UnsupportedOrderError):
        jet_eval(net, np.zeros(2), [(3, 2)])
    with pytest.raises(ShapeError):
        jet_eval(net, np.zeros(3), [(1, 0)])
    with pytest.raises(ShapeError):
        jet_eval(net, np.zeros(2), [(1, 0, 0)])


def test_fd_validate_examples():
    assert fd_validate(zeros((2, 3, 1)), np.zeros(2), (1, 0), 1e-3) == 0.0
    assert fd_validate(NEURON, np.array([0.3]), (1,), 1e-5) < 1e-8
    assert fd_validate(NEURON, np.array([0.3]), (4,), 1e-2) < 1e-4
    with pytest.raises(ValueError):
        fd_validate(NEURON, np.zeros(1), (1,), 0.0)


def test_mixed_partials_symmetric(rng):
    import jax

    net = build((3, 6, 6, 3), 7)
    z = rng.uniform(-1, 1, 3)
    f = lambda v: jnp.sum(jnp.asarray(net.params[-1][0]) @ jnp.tanh(
        net.params[1][0] @ jnp.tanh(net.params[0][0] @ v + net.params[0][1]) + net.params[1][1]))
    xy = jax.grad(lambda x: jax.grad(f)(jnp.array([x, z[1], z[2]]))[1])(z[0])
    yx = jax.grad(lambda y: jax.grad(f)(jnp.array([z[0], y, z[2]]))[0])(z[1])
    assert float(xy) == pytest.approx(float(yx), rel=1e-12)
    t = jet_eval(net, z, [(1, 1, 0)])
    assert t[(1, 1, 0)].sum() == pytest.approx(float(xy), rel=1e-12)


@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 1000))
def test_jet_is_linear(a, b, seed):
    n1, n2 = build((2, 5, 5, 1), seed), build((2, 4, 4, 1), seed + 1)
    z = np.array([0.3, -0.2])
    orders = multi_indices(2, 4)
    both = jet_eval(combine([n1, n2], [a, b]), z, orders)
    t1, t2 = jet_eval(n1, z, orders), jet_eval(n2, z, orders)
    for alpha in orders:
        expect = a * t1[alpha] + b * t2[alpha]
        np.testing.assert_allclose(both[alpha], expect, rtol=1e-12,
                                   atol=1e-12 * (1 + abs(t1[alpha]).max() + abs(t2[alpha]).max()))


def _oracle_nets():
    rng = np.random.default_rng(11)
    for k in range(100):
        dim = int(rng.integers(1, 4))
        hidden = tuple(int(w) for w in rng.integers(1, 9, size=int(rng.integers(1, 3))))
        widths = (dim,) + hidden + (int(rng.integers(1, 3)),)
        yield k, build(widths, k), rng.uniform(-1, 1, dim)


@pytest.mark.parametrize("k,net,z", list(_oracle_nets()), ids=lambda v: "")
def test_against_high_precision_differences(k, net, z):
    orders = multi_indices(net.in_dim, 4)
    exact = jet_eval(net, z, orders)
    approx = fd_table(net, z, orders, 1e-5, dps=30)
    for a in orders:
        scale = max(1.0, float(np.abs(exact[a]).max()))
        assert np.abs(exact[a] - approx[a]).max() <= 1e-6 * scale, (a, exact[a], approx[a])


def test_float_differences_follow_step_tuning():
    net = build((2, 6, 1), 2)
    z = np.array([0.1, 0.4])
    for alpha, h in (((1, 0), 1e-3), ((1, 1), 3e-3), ((2, 1), 1e-2), ((0, 4), 1e-2)):
        assert fd_validate(net, z, alpha, h) < 1e-6


def test_jet2_matches_full_jet(rng):
    net = build((3, 7, 5, 3), 1)
    Z = rng.uniform(-1, 1, (9, 3))
    U, J, H = jet2(net.params, jnp.asarray(Z))
    full = jet_eval_batch(net, Z, multi_indices(3, 2))
    np.testing.assert_allclose(U, full[(0, 0, 0)], rtol=1e-13, atol=1e-14)
    for i in range(3):
        e = [0, 0, 0]
        e[i] = 1
        np.testing.assert_allclose(J[i], full[tuple(e)], rtol=1e-12, atol=1e-13)
        e[i] = 2
        np.testing.assert_allclose(H[i], full[tuple(e)], rtol=1e-12, atol=1e-13)


def test_param_gradient_of_bias_square():
    net = zeros((2, 3, 1))
    net = NetworkParams(net.weights, (net.biases[0], np.array([0.7])))
    z = jnp.array([[0.2, 0.1]])
    g = param_gradient(lambda p: jet2(p, z)[0][0, 0] ** 2, net)
    assert g[-1] == pytest.approx(1.4)
    assert np.count_nonzero(g[:-1]) == 0


def test_param_gradient_of_constant():
    g = param_gradient(lambda p: 3.0 + 0.0 * p[0][0].sum(), build((2, 4, 1), 0))
    assert not np.any(g)


def test_param_gradient_divergence_residual_vs_differences(rng):
    net = build((3, 4, 4, 3), 5)
    z = jnp.asarray(rng.uniform(-1, 1, (1, 3)))

    def obj(p):
        _, J, _ = jet2(p, z, second=())
        return (J[0][0, 0] + J[1][0, 1]) ** 2

    g = param_gradient(obj, net)
    vec = net.to_vector()
    for i in rng.choice(len(vec), 12, replace=False):
        e = np.zeros_like(vec)
        e[i] = 1e-5
        up = float(obj(net.with_vector(vec + e).params))
        dn = float(obj(net.with_vector(vec - e).params))
        fd = (up - dn) / 2e-5
        assert abs(g[i] - fd) <= 1e-6 * max(abs(fd), abs(g).max())


def test_param_gradient_reports_bad_term():
    with pytest.raises(NonFiniteError) as err:
        param_gradient(lambda p: {"ok": p[0][0].sum(), "bad": jnp.log(-1.0 + 0 * p[0][1].sum())},
                       build((2, 3, 1), 0))
    assert "bad" in str(err.value)


def test_multi_index_count():
    for dim, k in itertools.product(range(1, 4), range(5)):
        assert len(multi_indices(dim, k)) == math.comb(dim + k, k)
