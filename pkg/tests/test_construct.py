import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nspinn.construct import (PartitionSpec, alpha_for, assemble, local_polyfit, monomial_net,
                              partition_eval, partition_units, product_net, sobolev_error,
                              theorem_widths)
from nspinn.errors import HypothesisError, UnsupportedOrderError
from nspinn.network import build, forward

X1 = np.linspace(-1, 1, 2001)


def _order(errs, ratio=2.0):
    return [math.log(a / b, ratio) for a, b in zip(errs, errs[1:])]


@pytest.mark.parametrize("p", [1, 2, 3])
def test_monomial_order_two(p):
    # even powers shift the argument by +-1, which doubles the range the stencil sees
    span = 2 if p % 2 == 0 else 1
    errs = [np.abs(monomial_net(p, h / span)(X1) - X1 ** p).max() for h in (0.2, 0.1, 0.05)]
    for o in _order(errs):
        assert o == pytest.approx(2, abs=0.2)


def test_odd_monomials_are_odd():
    for p in (1, 3, 5):
        assert monomial_net(p, 0.1)(0.0) == 0.0
        np.testing.assert_allclose(monomial_net(p, 0.1)(-X1), -monomial_net(p, 0.1)(X1), atol=1e-15)


def test_folded_width():
    # odd p: one unit per non-zero positive offset
    assert monomial_net(1, 0.1).width == 1
    assert monomial_net(3, 0.1).width == 2


def test_direct_even_power_refused():
    with pytest.raises(UnsupportedOrderError):
        monomial_net(2, 0.1, mode="direct")


def test_shift_identity_symbolically():
    import sympy as sp

    z = sp.symbols("z")
    assert sp.expand(((z + 1) ** 3 - (z - 1) ** 3 - 2) / 6) == z ** 2


def test_product_net():
    rng = np.random.default_rng(3)
    Y = rng.uniform(-1, 1, (4000, 2))
    errs = [np.abs(product_net(2, h)(Y) - Y[:, 0] * Y[:, 1]).max() for h in (0.1, 0.05)]
    assert errs[0] / errs[1] >= 2 ** 1.5
    P = product_net(2, 0.05)
    zero = np.column_stack([np.zeros(100), rng.uniform(-1, 1, 100)])
    assert np.abs(P(zero)).max() <= errs[1]
    np.testing.assert_allclose(P(Y), P(Y[:, ::-1]), atol=1e-12)
    P3 = product_net(3, 0.05)
    Y3 = rng.uniform(-1, 1, (200, 3))
    for perm in itertools.permutations(range(3)):
        np.testing.assert_allclose(P3(Y3[:, perm]), P3(Y3), atol=1e-12)
    with pytest.raises(ValueError):
        product_net(1, 0.1)


def test_alpha_examples():
    assert alpha_for(10, 0.01) == pytest.approx(85.97, abs=0.01)
    with pytest.raises(ValueError):
        alpha_for(10, 1.5)


def _conditions(alpha, N, eps):
    t = math.tanh(alpha / N)
    d1 = 1 - t * t
    return (alpha / N >= 1 and 1 - t <= eps * (1 + 1e-12) and alpha * d1 <= eps * (1 + 1e-12)
            and alpha ** 2 * 2 * t * d1 <= eps * (1 + 1e-12))


@given(st.integers(2, 200), st.floats(1e-12, 0.9))
def test_alpha_conditions(N, eps):
    candidate = N * math.log(4 * N * N / (math.e ** 2 * eps))
    if _conditions(candidate, N, eps):
        a = alpha_for(N, eps)
        assert a == candidate
        assert a / N >= 1
        assert 1 - math.tanh(a / N) <= eps * (1 + 1e-12)
    else:
        with pytest.raises(ArithmeticError):
            alpha_for(N, eps)


def test_alpha_formula_falls_short_for_small_n():
    # the second-derivative condition fails here, so the guard must fire
    with pytest.raises(ArithmeticError):
        alpha_for(3, 0.0085)
    with pytest.raises(ArithmeticError):
        alpha_for(20, 0.5)
    # the tolerances the assembly actually uses are far inside the valid region
    for N in (6, 12, 24, 48):
        assert _conditions(alpha_for(N, 1e-6), N, 1e-6)


@given(st.integers(1, 5), st.lists(st.floats(-2, 2), min_size=2, max_size=2))
def test_ridge_basis_identity(s, y):
    from nspinn.construct import _ridge_basis

    V, G, gammas = _ridge_basis(2, s)
    y = np.array(y)
    P = (V @ y) ** s
    for i, g in enumerate(gammas):
        assert G[i] @ P == pytest.approx(np.prod(y ** np.array(g)), abs=1e-9 * (1 + np.abs(P).max()))


@pytest.mark.parametrize("N", [4, 16, 64])
def test_telescoping_partition(N):
    spec = PartitionSpec(N, alpha_for(N, 1e-3))
    y = np.random.default_rng(N).uniform(-0.5, 1.5, 1000)
    total = sum(partition_eval(spec, j, y) for j in range(1, N + 1))
    assert np.abs(total - 1).max() <= 1e-12


def test_partition_details():
    spec = PartitionSpec(8, alpha_for(8, 1e-3))
    assert partition_eval(spec, 1, 1 / 8) == 0.5
    with pytest.raises(IndexError):
        partition_eval(spec, 9, 0.5)
    with pytest.raises(ValueError):
        PartitionSpec(8, 4.0)
    # network rows reproduce the closed form
    W, b, maps = partition_units(spec)
    y = np.linspace(0, 1, 101)
    H = np.tanh(np.outer(y, W[:, 0]) + b)
    for j, (terms, const) in enumerate(maps[0], start=1):
        val = const + sum(c * H[:, u] for u, c in terms)
        np.testing.assert_allclose(val, partition_eval(spec, j, y), atol=1e-14)


@pytest.mark.parametrize("D", [1, 2])
def test_neighbour_sum_close_to_one(D):
    N, eps = 6, 1e-4
    spec = PartitionSpec(N, alpha_for(N, eps), ((0.0, 1.0),) * D)
    for j in itertools.product(range(1, N + 1), repeat=D):
        cell = [np.linspace((ji - 1) / N, ji / N, 9) for ji in j]
        X = np.stack([m.ravel() for m in np.meshgrid(*cell, indexing="ij")], axis=-1)
        s = np.zeros(len(X))
        for v in itertools.product((-1, 0, 1), repeat=D):
            jv = tuple(a + b for a, b in zip(j, v))
            if all(1 <= x <= N for x in jv):
                s += partition_eval(spec, jv, X)
        assert np.abs(s - 1).max() <= D * eps


def test_polyfit_exact_and_constant():
    cube = [(0.2, 0.5)]
    f = lambda X: 1.0 - 2.0 * X[:, 0] + 0.5 * X[:, 0] ** 3
    p = local_polyfit(f, cube, 3)
    for key, want in {(0,): 1.0, (1,): -2.0, (2,): 0.0, (3,): 0.5}.items():
        assert p.coeffs[key] == pytest.approx(want, abs=1e-10)
    c = local_polyfit(lambda X: np.full(len(X), 4.2), [(0, 1), (1, 2)], 2)
    for key, v in c.coeffs.items():
        assert v == pytest.approx(4.2 if sum(key) == 0 else 0.0, abs=1e-10)
    with pytest.raises(ValueError):
        local_polyfit(f, [(0.5, 0.5)], 3)


def test_polyfit_error_rate():
    m = 4
    errs = []
    Ns = (4, 8, 16)
    for N in Ns:
        cube = [(0.3, 0.3 + 1 / N)]
        p = local_polyfit(lambda X: np.sin(X[:, 0]), cube, m - 1)
        xs = np.linspace(*cube[0], 501)
        errs.append(np.abs(p(xs) - np.sin(xs)).max())
    assert np.polyfit(np.log(Ns), np.log(errs), 1)[0] <= -m + 0.2


def test_polyfit_derivative():
    p = local_polyfit(lambda X: X[:, 0] ** 2 * X[:, 1], [(0, 1), (0, 1)], 3, origin=(0.5, 0.5),
                      scale=(0.5, 0.5))
    X = np.random.default_rng(0).uniform(0, 1, (20, 2))
    np.testing.assert_allclose(p.derivative((1, 1))(X), 2 * X[:, 0], atol=1e-9)


@pytest.fixture(scope="module")
def constant_net():
    return assemble(lambda X: np.full(len(X), 0.7), [(0.0, 1.0)], 6, 4)


def test_constant_is_reproduced(constant_net):
    net, rep = constant_net
    v = np.array([forward(net, np.array([x]))[0] for x in np.linspace(0, 1, 801)])
    assert np.abs(v - 0.7).max() <= rep.cubes * rep.extras["product_error"] + rep.eps


def test_widths_match_formula(constant_net):
    net, rep = constant_net
    assert rep.theorem_widths == theorem_widths([(0.0, 1.0)], 6, 4, 2)
    assert rep.widths == rep.theorem_widths and rep.padded
    assert net.widths[1:3] == rep.widths
    assert all(a <= b for a, b in zip(rep.extras["actual_widths"], rep.widths))


def test_assembly_hypotheses():
    f = lambda X: X[:, 0]
    for kw in ({"N": 5, "m": 4}, {"N": 6, "m": 2}, {"N": 6, "m": 4, "n": 1}):
        with pytest.raises(HypothesisError):
            assemble(f, [(0, 1)], **kw)
    with pytest.raises(HypothesisError):
        assemble(f, [(0, 1)] * 3, 6, 4)


def test_two_dimensional_assembly():
    f = lambda X: np.sin(X[:, 0]) * np.cos(X[:, 1])
    net, rep = assemble(f, [(0.0, 1.0), (0.0, 1.0)], 6, 3)
    X = np.random.default_rng(1).uniform(0, 1, (200, 2))
    err = max(abs(forward(net, x)[0] - f(x[None])[0]) for x in X)
    assert err < 1e-2


def test_sobolev_error_properties():
    net = build((1, 6, 6, 1), 0)
    box = [(0.0, 1.0)]
    zero = {(i,): (lambda X: np.zeros(len(X))) for i in range(3)}
    from nspinn.deriv import jet_eval_batch
    from nspinn.quadrature import midpoint_rule

    pts, w, _, _ = midpoint_rule(box, (4000,))
    tab = jet_eval_batch(net, pts, [(0,), (1,), (2,)])
    direct = math.sqrt(sum(float(np.sum(w * tab[a][:, 0] ** 2)) for a in [(0,), (1,)]))
    assert sobolev_error(zero, net, 1, box, (4000,)) == pytest.approx(direct, rel=1e-12)
    f = {(0,): lambda X: np.sin(X[:, 0]), (1,): lambda X: np.cos(X[:, 0]),
         (2,): lambda X: -np.sin(X[:, 0])}
    e = [sobolev_error(f, net, k, box, (4000,)) for k in range(3)]
    assert e[0] <= e[1] <= e[2]
    coarse, fine = sobolev_error(f, net, 2, box, (2000,)), sobolev_error(f, net, 2, box, (4000,))
    assert abs(coarse - fine) < 0.05 * fine
    with pytest.raises(KeyError):
        sobolev_error({(0,): f[(0,)]}, net, 1, box, (100,))
    with pytest.raises(UnsupportedOrderError):
        sobolev_error(f, net, 3, box, (100,))
