"""Taylor-Green vortex: closed-form solution and error metrics against it."""

import math
from dataclasses import dataclass
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .quadrature import INTERIOR, QuadratureSet, integrate_values

PI = math.pi


@dataclass(frozen=True)
class TaylorGreen:
    nu: float = 0.01
    rho: float = 1.0
    box: tuple = ((0.5, 4.5), (0.5, 4.5))
    T: float = 1.0

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("viscosity must be non-negative")
        if self.rho <= 0:
            raise ValueError("density must be positive")
        object.__setattr__(self, "box", tuple(tuple(map(float, ab)) for ab in self.box))

    d = 2

    def __call__(self, z):
        """(u, v, p) at z = (x, y, t); works on jax or numpy arrays of shape (..., 3)."""
        x, y, t = z[..., 0], z[..., 1], z[..., 2]
        xp = jnp if isinstance(z, jax.Array) else np
        f = xp.exp(-2.0 * PI ** 2 * self.nu * t)
        u = -xp.cos(PI * x) * xp.sin(PI * y) * f
        v = xp.sin(PI * x) * xp.cos(PI * y) * f
        p = -0.25 * self.rho * (xp.cos(2 * PI * x) + xp.cos(2 * PI * y)) * f * f
        return xp.stack([u, v, p], axis=-1)

    def u0(self, x):
        x = np.asarray(x, dtype=float)
        z = np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], axis=-1)
        return self(z)[..., :2]

    @property
    def domain(self):
        return list(self.box) + [(0.0, self.T)]

    @property
    def area(self):
        return math.prod(hi - lo for lo, hi in self.box)

    @property
    def perimeter(self):
        (a0, a1), (b0, b1) = self.box
        return 2.0 * ((a1 - a0) + (b1 - b0))

    def velocity_cn(self, n):
        """Sup over the space-time box of all derivatives of u, v up to order n.

        Each x/y derivative contributes pi, each t derivative 2 pi^2 nu; the
        trigonometric factor reaches 1 in the box and the decay factor is 1 at t=0.
        """
        return max(PI ** k * (2 * PI ** 2 * self.nu) ** j
                   for k in range(n + 1) for j in range(n + 1 - k))

    def pressure_cn(self, n):
        best = 0.5 * self.rho
        for j in range(n + 1):
            for k in range(n + 1 - j):
                c = 0.5 if k == 0 else 0.25
                best = max(best, c * self.rho * (2 * PI) ** k * (4 * PI ** 2 * self.nu) ** j)
        return best

    def grad_sup(self):
        """Exact sup of |d_i u_j| over the box: pi, attained at t = 0."""
        return PI


def exact_jet(tg: TaylorGreen, z, orders):
    """Closed-form derivatives (via autodiff of the closed form) for a point batch."""
    from .deriv import _pick

    z = jnp.asarray(np.asarray(z, dtype=float))
    k = max(sum(a) for a in orders)

    def per_point(p):
        g = tg.__call__
        outs = [g(p)]
        for _ in range(k):
            g = jax.jacfwd(g)
            outs.append(g(p))
        return outs

    tensors = jax.vmap(per_point)(z)
    return {tuple(a): np.asarray(_pick(tensors, tuple(a))) for a in orders}


class L2Error(NamedTuple):
    velocity: float
    pressure: float


def _fields(model, Z):
    if hasattr(model, "fields"):
        return np.asarray(model.fields(Z))
    if callable(model):
        return np.asarray(model(Z))
    from .network import forward

    return forward(model, Z)


def l2_error(model, tg: TaylorGreen, grid: QuadratureSet) -> L2Error:
    """sqrt of the midpoint integral of |u - u_model|^2 over D x [0,T]; pressure separately."""
    if grid.kind != INTERIOR:
        raise ValueError(f"l2_error needs an interior set, got {grid.kind}")
    Z = np.asarray(grid.points)
    diff = np.asarray(tg(Z)) - _fields(model, Z)
    e_u = integrate_values(grid, np.sum(diff[:, :2] ** 2, axis=1), "velocity error")
    e_p = integrate_values(grid, diff[:, 2] ** 2, "pressure error")
    return L2Error(math.sqrt(max(e_u, 0.0)), math.sqrt(max(e_p, 0.0)))


def grad_inf(obj, grid=None):
    """max_{i,j} |d_i u_j| over the spatial directions.

    A ``TaylorGreen`` without a grid returns its analytic supremum; otherwise the
    maximum over the grid points is returned.
    """
    if isinstance(obj, TaylorGreen) and grid is None:
        return obj.grad_sup()
    if grid is None:
        raise ValueError("a model needs a grid to estimate its gradient")
    Z = np.asarray(grid.points if hasattr(grid, "points") else grid, dtype=float)
    d = Z.shape[1] - 1
    alphas = [tuple(1 if j == i else 0 for j in range(d + 1)) for i in range(d)]
    if isinstance(obj, TaylorGreen):
        table = exact_jet(obj, Z, alphas)
    elif hasattr(obj, "jet"):
        table = obj.jet(Z, alphas)
    else:
        from .deriv import jet_eval_batch

        table = jet_eval_batch(obj, Z, alphas)
    return max(float(np.abs(table[a][:, :d]).max()) for a in alphas)
