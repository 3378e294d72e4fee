"""Pointwise PINN / XPINN residuals of the incompressible Navier-Stokes system.

Coordinates are z = (x_1, ..., x_d, t) and model outputs are (u_1, ..., u_d, p).
"""

from dataclasses import dataclass
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np

from .deriv import DerivTable, apply, jet2, jet_eval_batch
from .errors import ShapeError
from .network import NetworkParams, from_params


def pde_from_jet(U, J, H, nu, rho=1.0):
    """Momentum and divergence residuals from values/first/second derivatives.

    U: (B, d+1), J: (d+1, B, d+1) with input axis first, H: (d, B, d+1) pure
    second derivatives in the spatial directions. Works for numpy and jax arrays.
    """
    d = U.shape[-1] - 1
    xp = jnp if isinstance(U, jax.Array) else np
    u = U[:, :d]
    grads = J[:d]                                  # grads[i][:, j] = d_i (u, p)_j
    conv = sum(u[:, i:i + 1] * grads[i][:, :d] for i in range(d))
    gradp = xp.stack([grads[i][:, d] for i in range(d)], axis=1)
    lap = sum(H[i][:, :d] for i in range(d))
    r_pde = J[d][:, :d] + conv + gradp / rho - nu * lap
    r_div = sum(grads[i][:, i] for i in range(d))
    return r_pde, r_div


def member_apply(mparams, Z):
    return jnp.concatenate([apply(p, Z) for p in mparams], axis=-1)


def member_jet2(mparams, Z, second):
    parts = [jet2(p, Z, second) for p in mparams]
    if len(parts) == 1:
        return parts[0]
    return tuple(jnp.concatenate([q[k] for q in parts], axis=-1) for k in range(3))


def _in_box(X, box):
    ok = np.ones(len(X), dtype=bool)
    for i, (lo, hi) in enumerate(box):
        ok &= (X[:, i] >= lo) & (X[:, i] <= hi)
    return ok


@dataclass(frozen=True, eq=False)
class ModelBundle:
    """Velocity/pressure networks, one group per subdomain.

    ``members[q]`` is a tuple of networks whose outputs are concatenated: a single
    network with d+1 outputs (shared mode) or d+1 one-output networks
    (per-component mode). ``subdomains`` holds one spatial box per member, or
    None for a plain PINN.
    """

    members: tuple
    nu: float
    rho: float = 1.0
    subdomains: Optional[tuple] = None

    def __post_init__(self):
        members = tuple(tuple(m) if isinstance(m, (tuple, list)) else (m,) for m in self.members)
        object.__setattr__(self, "members", members)
        if self.nu < 0:
            raise ValueError("viscosity must be non-negative")
        d1 = members[0][0].in_dim
        for m in members:
            if any(n.in_dim != d1 for n in m) or sum(n.out_dim for n in m) != d1:
                raise ShapeError(f"each member needs {d1} inputs and {d1} outputs in total")
        if self.subdomains is None:
            if len(members) != 1:
                raise ValueError("several members need subdomain boxes")
        else:
            boxes = tuple(tuple(tuple(map(float, ab)) for ab in b) for b in self.subdomains)
            if len(boxes) != len(members):
                raise ValueError("one subdomain box per member is required")
            _check_tiling(boxes)
            object.__setattr__(self, "subdomains", boxes)

    @classmethod
    def single(cls, net, nu, rho=1.0):
        return cls((net,), nu, rho)

    @classmethod
    def xpinn(cls, nets, boxes, nu, rho=1.0):
        return cls(tuple(nets), nu, rho, tuple(boxes))

    @property
    def d(self):
        return self.members[0][0].in_dim - 1

    @property
    def is_xpinn(self):
        return self.subdomains is not None

    @property
    def params(self):
        return [[n.params for n in m] for m in self.members]

    def with_params(self, params):
        members = tuple(tuple(from_params(p) for p in m) for m in params)
        return ModelBundle(members, self.nu, self.rho, self.subdomains)

    def nets(self):
        return [n for m in self.members for n in m]

    def chi(self, Z):
        """chi_q(z) = 1/#owners inside subdomain q, 0 outside; shape (Q, B)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if not self.is_xpinn:
            return np.ones((1, len(Z)))
        own = np.stack([_in_box(Z[:, :self.d], b) for b in self.subdomains]).astype(float)
        count = own.sum(axis=0)
        if np.any(count == 0):
            k = int(np.argmin(count))
            raise ValueError(f"point {Z[k].tolist()} lies outside every subdomain")
        return own / count

    def member_fields(self, q, Z):
        return np.asarray(member_apply(self.params[q], jnp.asarray(Z)))

    def fields(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        chi = self.chi(Z)
        return sum(chi[q][:, None] * self.member_fields(q, Z) for q in range(len(self.members)))

    def member_jet2(self, q, Z):
        Z = jnp.asarray(np.atleast_2d(np.asarray(Z, dtype=float)))
        return tuple(np.asarray(a) for a in member_jet2(self.params[q], Z, tuple(range(self.d))))

    def jet2(self, Z):
        chi = self.chi(Z)
        out = None
        for q in range(len(self.members)):
            parts = self.member_jet2(q, Z)
            w = chi[q]
            scaled = (w[:, None] * parts[0], w[None, :, None] * parts[1], w[None, :, None] * parts[2])
            out = scaled if out is None else tuple(a + b for a, b in zip(out, scaled))
        return out

    def member_jet(self, q, Z, orders):
        tables = [jet_eval_batch(n, Z, orders) for n in self.members[q]]
        return DerivTable({a: np.concatenate([t[a] for t in tables], axis=1) for a in tables[0]})

    def jet(self, Z, orders):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        chi = self.chi(Z)
        out = DerivTable()
        for q in range(len(self.members)):
            t = self.member_jet(q, Z, orders)
            for a, v in t.items():
                out[a] = out.get(a, 0.0) + chi[q][:, None] * v
        return out

    __call__ = fields


def _check_tiling(boxes):
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            overlap = all(min(a[1], b[1]) - max(a[0], b[0]) > 0 for a, b in zip(boxes[i], boxes[j]))
            if overlap:
                raise ValueError(f"subdomains {i} and {j} overlap")


def split_box(box, axis, value):
    """Two boxes sharing the face x_axis = value."""
    lo = [tuple(ab) for ab in box]
    hi = [tuple(ab) for ab in box]
    lo[axis] = (box[axis][0], value)
    hi[axis] = (value, box[axis][1])
    return tuple(lo), tuple(hi)


class ExactModel:
    """Wraps a closed-form solution (e.g. ``TaylorGreen``) with the model interface."""

    def __init__(self, solution, nu=None, rho=None):
        self.solution = solution
        self.nu = solution.nu if nu is None else nu
        self.rho = solution.rho if rho is None else rho
        self.d = len(solution.box)
        self.is_xpinn = False

    def fields(self, Z):
        return np.asarray(self.solution(np.atleast_2d(np.asarray(Z, dtype=float))))

    __call__ = fields

    def jet2(self, Z):
        Z = jnp.asarray(np.atleast_2d(np.asarray(Z, dtype=float)))
        f = self.solution.__call__
        D = Z.shape[1]
        J, H = [], []
        for i in range(D):
            e = jnp.zeros_like(Z).at[:, i].set(1.0)
            J.append(jax.jvp(f, (Z,), (e,))[1])
            if i < self.d:
                H.append(jax.jvp(lambda y: jax.jvp(f, (y,), (e,))[1], (Z,), (e,))[1])
        return np.asarray(f(Z)), np.stack([np.asarray(j) for j in J]), np.stack([np.asarray(h) for h in H])

    def jet(self, Z, orders):
        from .bench import exact_jet

        return DerivTable(exact_jet(self.solution, Z, orders))


def _points(z):
    z = np.asarray(z, dtype=float)
    return z[None, :] if z.ndim == 1 else z


def _squeeze(single, *arrays):
    return tuple(a[0] for a in arrays) if single else arrays


def interior_residuals(m, z):
    """(R_PDE, R_div) at one point or a batch of points."""
    single = np.ndim(z) == 1
    Z = _points(z)
    U, J, H = m.jet2(Z)
    r_pde, r_div = pde_from_jet(U, J, H, m.nu, m.rho)
    return _squeeze(single, np.asarray(r_pde), np.asarray(r_div))


def temporal_residual(m, x, u0):
    """u_theta(x, 0) - u0(x) for spatial point(s) x."""
    single = np.ndim(x) == 1
    X = _points(x)
    Z = np.concatenate([X, np.zeros((len(X), 1))], axis=1)
    r = m.fields(Z)[:, :m.d] - np.asarray(u0(X))
    return r[0] if single else r


def spatial_residual(m, z, mode="dirichlet", twin=None, exact=None):
    """Boundary residual triple (u jump, p jump, grad-u jump).

    ``periodic`` compares each point with its twin on the opposite face;
    ``dirichlet`` compares the velocity with an exact solution and reports zero
    for the other two entries. ``z`` may be a spatial-boundary QuadratureSet,
    in which case its twin table is used.
    """
    if hasattr(z, "points"):
        if twin is None and z.twin is not None:
            twin = np.asarray(z.points)[z.twin]
        z = np.asarray(z.points)
    single = np.ndim(z) == 1
    Z = _points(z)
    d = m.d
    if mode in ("periodic",):
        if twin is None:
            raise ValueError("periodic mode needs the opposite-face twin of every point")
        Zt = _points(twin)
        if Zt.shape != Z.shape:
            raise ValueError("every boundary point needs exactly one twin")
        U1, J1, _ = m.jet2(Z)
        U2, J2, _ = m.jet2(Zt)
        r_u = U1[:, :d] - U2[:, :d]
        r_p = U1[:, d] - U2[:, d]
        r_g = np.stack([J1[i][:, :d] - J2[i][:, :d] for i in range(d)], axis=1)   # (B, i, j)
    elif mode in ("dirichlet", "dirichlet-exact"):
        if exact is None:
            raise ValueError("dirichlet mode needs an exact-solution evaluator")
        r_u = m.fields(Z)[:, :d] - np.asarray(exact(Z))[:, :d]
        r_p = np.zeros(len(Z))
        r_g = np.zeros((len(Z), d, d))
    else:
        raise ValueError(f"unknown boundary mode {mode!r}")
    return _squeeze(single, r_u, r_p, r_g)


def interface_jumps(m, z, pair=(0, 1)):
    """Full jump vectors between two subnetworks: (du (B,d), dgrad (B,d,d), dp (B,), dR_pde (B,d))."""
    if not getattr(m, "is_xpinn", False):
        raise ValueError("interface residuals need a decomposed (XPINN) model")
    Z = _points(z)
    d = m.d
    qa, qb = pair
    Ua, Ja, Ha = m.member_jet2(qa, Z)
    Ub, Jb, Hb = m.member_jet2(qb, Z)
    ra, _ = pde_from_jet(Ua, Ja, Ha, m.nu, m.rho)
    rb, _ = pde_from_jet(Ub, Jb, Hb, m.nu, m.rho)
    du = Ua[:, :d] - Ub[:, :d]
    dg = np.stack([Ja[i][:, :d] - Jb[i][:, :d] for i in range(d)], axis=1)
    dp = Ua[:, d] - Ub[:, d]
    return du, dg, dp, ra - rb


def interface_residuals(m, z, pair=(0, 1)):
    """(R_u, R_grad_u, R_p): component-wise maxima of the absolute jumps."""
    single = np.ndim(z) == 1
    du, dg, dp, _ = interface_jumps(m, z, pair)
    r_u = np.abs(du).max(axis=1)
    r_g = np.abs(dg).reshape(len(dg), -1).max(axis=1)
    r_p = np.abs(dp)
    return _squeeze(single, r_u, r_g, r_p)


def blend_eval(m, z):
    """Blended model value and the chi weights used."""
    single = np.ndim(z) == 1
    Z = _points(z)
    chi = m.chi(Z)
    vals = sum(chi[q][:, None] * m.member_fields(q, Z) for q in range(chi.shape[0]))
    return (vals[0], chi[:, 0]) if single else (vals, chi)
