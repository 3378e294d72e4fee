import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from nspinn.bench import TaylorGreen, exact_jet, grad_inf, l2_error
from nspinn.network import zeros
from nspinn.quadrature import midpoint_box, midpoint_interior
from nspinn.residuals import ExactModel


def test_closed_form_values():
    for nu in (0.0, 0.01, 0.3):
        np.testing.assert_allclose(TaylorGreen(nu=nu)(np.array([1.0, 0.5, 0.0])), [1, 0, 0], atol=1e-15)
    u = TaylorGreen(nu=0.01)(np.array([1.0, 0.5, 1.0]))[0]
    assert u == pytest.approx(math.exp(-2 * math.pi ** 2 * 0.01), rel=1e-14)
    assert u == pytest.approx(0.8209, abs=1e-4)


def test_bad_parameters():
    with pytest.raises(ValueError):
        TaylorGreen(nu=-1)
    with pytest.raises(ValueError):
        TaylorGreen(rho=0)


def test_divergence_free(rng):
    tg = TaylorGreen(nu=0.01)
    Z = np.column_stack([rng.uniform(0.5, 4.5, (10_000, 2)), rng.uniform(0, 1, 10_000)])
    j = exact_jet(tg, Z, [(1, 0, 0), (0, 1, 0)])
    assert np.abs(j[(1, 0, 0)][:, 0] + j[(0, 1, 0)][:, 1]).max() <= 1e-12


def test_l2_error_of_exact_is_zero():
    tg = TaylorGreen()
    grid = midpoint_interior(tg.box, tg.T, (12, 12, 6))
    err = l2_error(ExactModel(tg), tg, grid)
    assert err.velocity <= 1e-12 and err.pressure <= 1e-12
    with pytest.raises(ValueError):
        l2_error(ExactModel(tg), tg, midpoint_box([(0, 1)] * 3, (2, 2, 2), kind="initial"))


def test_l2_error_of_zero_model_matches_symbolic_integral():
    x, y = sp.symbols("x y")
    half = sp.Rational(1, 2)
    a, b = half, 4 + half
    integrand = (sp.cos(sp.pi * x) * sp.sin(sp.pi * y)) ** 2 + (sp.sin(sp.pi * x) * sp.cos(sp.pi * y)) ** 2
    exact = float(sp.integrate(integrand, (x, a, b), (y, a, b)))   # nu = 0: no decay, T = 1
    tg = TaylorGreen(nu=0.0)
    err = l2_error(zeros((3, 4, 3)), tg, midpoint_interior(tg.box, 1.0, (40, 40, 4)))
    assert err.velocity ** 2 == pytest.approx(exact, rel=1e-10)


def test_error_shrinks_with_better_fits():
    # least-squares fits of u in a growing Fourier-free polynomial basis; more
    # basis terms can only lower the discrete error on the same grid
    tg = TaylorGreen(nu=0.0)
    grid = midpoint_interior(tg.box, 1.0, (20, 20, 2))
    Z = np.asarray(grid.points)
    target = np.asarray(tg(Z))
    errs = []
    for deg in (1, 3, 5, 7):
        V = np.column_stack([Z[:, 0] ** i * Z[:, 1] ** j for i in range(deg + 1) for j in range(deg + 1)])
        coef, *_ = np.linalg.lstsq(V, target, rcond=None)
        fit = V @ coef
        errs.append(l2_error(lambda P, f=fit: f, tg, grid).velocity)
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_grad_inf():
    for nu in (0.0, 0.01, 1.0):
        assert grad_inf(TaylorGreen(nu=nu)) == math.pi
    tg = TaylorGreen(nu=0.01)
    grid = midpoint_interior(tg.box, 1.0, (17, 17, 3))
    assert grad_inf(tg, grid) <= math.pi
    assert grad_inf(tg, grid) > 3.0
    assert grad_inf(zeros((3, 5, 3)), grid) == 0.0


@given(st.floats(0.0, 0.2), st.floats(0.0, 1.0))
def test_energy_decay_law(nu, t):
    tg = TaylorGreen(nu=nu)
    grid = midpoint_box(list(tg.box), (16, 16))
    P = np.asarray(grid.points)

    def energy(s):
        Z = np.column_stack([P, np.full(len(P), s)])
        return float(grid.weights @ np.sum(np.asarray(tg(Z))[:, :2] ** 2, axis=1))

    assert energy(t) == pytest.approx(energy(0.0) * math.exp(-4 * math.pi ** 2 * nu * t), rel=1e-12)


def test_cn_helpers_are_upper_bounds(rng):
    tg = TaylorGreen(nu=0.1)
    Z = np.column_stack([rng.uniform(0.5, 4.5, (200, 2)), rng.uniform(0, 1, 200)])
    from nspinn.deriv import multi_indices

    jet = exact_jet(tg, Z, multi_indices(3, 3))
    vel = max(np.abs(v[:, :2]).max() for v in jet.values())
    pres = max(np.abs(v[:, 2]).max() for v in jet.values())
    assert vel <= tg.velocity_cn(3) * (1 + 1e-12)
    assert pres <= tg.pressure_cn(3) * (1 + 1e-12)
