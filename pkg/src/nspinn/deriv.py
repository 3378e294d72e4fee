"""Input derivatives (orders <= 4) and parameter gradients of tanh networks.

Derivatives come from JAX forward-mode autodiff, so they are exact up to
rounding. ``jet2`` is a hand-rolled layer recurrence carrying values, first
derivatives and pure second derivatives, which is all the PDE residuals need
and is several times cheaper than a full Hessian.
"""

import itertools
import math
from functools import lru_cache

import jax
import jax.numpy as jnp
import numpy as np
from jax.flatten_util import ravel_pytree

from .errors import NonFiniteError, ShapeError, UnsupportedOrderError
from .network import NetworkParams, from_params
from .stencil import fd_weights

MAX_ORDER = 4


class DerivTable(dict):
    """Maps multi-index tuples to arrays of output values.

    For a single point each entry has shape (n_out,); batched tables carry a
    leading point axis.
    """

    @property
    def value(self):
        return self[next(k for k in self if sum(k) == 0)]


def multi_indices(dim, max_order, min_order=0):
    out = []
    for k in range(min_order, max_order + 1):
        # reverse-lexicographic inside each order: (2,0), (1,1), (0,2)
        combos = itertools.combinations_with_replacement(range(dim), k)
        out.extend(tuple(c.count(i) for i in range(dim)) for c in combos)
    return out


def unit(dim, i, times=1):
    a = [0] * dim
    a[i] = times
    return tuple(a)


def _normalise(orders, dim):
    orders = [tuple(int(v) for v in a) for a in orders]
    for a in orders:
        if len(a) != dim:
            raise ShapeError(f"multi-index {a} has {len(a)} entries, input dimension is {dim}")
        if min(a) < 0:
            raise ValueError(f"negative entry in multi-index {a}")
        if sum(a) > MAX_ORDER:
            raise UnsupportedOrderError(f"order {sum(a)} of {a} exceeds {MAX_ORDER}")
    zero = (0,) * dim
    if zero not in orders:
        orders.insert(0, zero)
    return list(dict.fromkeys(orders))


def apply(params, z):
    """Network realisation in jax; works on a point or a batch of points."""
    h = z
    for W, b in params[:-1]:
        h = jnp.tanh(h @ W.T + b)
    W, b = params[-1]
    return h @ W.T + b


@lru_cache(maxsize=None)
def _tensor_fn(order):
    """Jitted map (params, Z) -> list of derivative tensors of order 0..order."""

    def per_point(params, z):
        f = lambda x: apply(params, x)
        outs = [f(z)]
        g = f
        for _ in range(order):
            g = jax.jacfwd(g)
            outs.append(g(z))
        return outs

    return jax.jit(jax.vmap(per_point, in_axes=(None, 0)))


def _pick(tensors, alpha):
    k = sum(alpha)
    idx = tuple(i for i, c in enumerate(alpha) for _ in range(c))
    t = tensors[k]
    return t[(slice(None), slice(None)) + idx]


def _padded(net: NetworkParams, bucket=8):
    """Parameters with hidden widths rounded up to a multiple of ``bucket``.

    Extra units have zero incoming and outgoing weights, so the realisation is
    unchanged; the point is that nets of similar size share one compiled kernel.
    """
    params = []
    prev_extra = 0
    last = net.depth - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        extra = 0 if k == last else -len(b) % bucket
        W = np.pad(W, ((0, extra), (0, prev_extra)))
        params.append((jnp.asarray(W), jnp.asarray(np.pad(b, (0, extra)))))
        prev_extra = extra
    return params


def jet_eval_batch(net: NetworkParams, Z, orders, chunk=4096) -> DerivTable:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != net.in_dim:
        raise ShapeError(f"expected points of shape (B, {net.in_dim}), got {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise ValueError("evaluation points must be finite")
    orders = _normalise(orders, net.in_dim)
    fn = _tensor_fn(max(sum(a) for a in orders))
    parts = {a: [] for a in orders}
    params = _padded(net)
    for s in range(0, max(len(Z), 1), chunk):
        tensors = fn(params, jnp.asarray(Z[s:s + chunk]))
        for a in orders:
            parts[a].append(np.asarray(_pick(tensors, a)))
    return DerivTable({a: np.concatenate(v, axis=0) for a, v in parts.items()})


def jet_eval(net: NetworkParams, z, orders) -> DerivTable:
    z = np.asarray(z, dtype=float)
    if z.shape != (net.in_dim,):
        raise ShapeError(f"expected a point with {net.in_dim} coordinates, got shape {z.shape}")
    table = jet_eval_batch(net, z[None, :], orders)
    return DerivTable({a: v[0] for a, v in table.items()})


def jet2(params, Z, second=None):
    """Values, gradients and selected pure second derivatives on a batch.

    Returns ``(U, J, H)`` with U of shape (B, out), J of shape (D, B, out)
    holding d/dz_i and H of shape (len(second), B, out) holding d^2/dz_i^2 for
    i in ``second`` (default: every input).
    """
    D = Z.shape[1]
    second = tuple(range(D)) if second is None else tuple(second)
    W, b = params[0]
    a = Z @ W.T + b
    t = jnp.tanh(a)
    s1 = 1.0 - t * t
    Wt = W.T[:, None, :]                      # (D, 1, width)
    J = s1[None] * Wt
    Ws = Wt[jnp.array(second)] if second else Wt[:0]
    H = (-2.0 * t * s1)[None] * Ws * Ws
    h = t
    for W, b in params[1:-1]:
        a = h @ W.T + b
        Ja = J @ W.T
        Ha = H @ W.T
        t = jnp.tanh(a)
        s1 = 1.0 - t * t
        H = (-2.0 * t * s1)[None] * Ja[jnp.array(second)] ** 2 + s1[None] * Ha if second else Ha
        J = s1[None] * Ja
        h = t
    W, b = params[-1]
    return h @ W.T + b, J @ W.T, H @ W.T


def flat_params(params):
    vec, unravel = ravel_pytree(params)
    return vec, unravel


def param_gradient(objective, net: NetworkParams):
    """Gradient of ``objective(params)`` w.r.t. all network parameters as a flat vector.

    ``objective`` receives the parameter pytree (list of (W, b)) and returns a
    scalar or a dict of named scalar terms, which are summed.
    """
    def total(p):
        r = objective(p)
        if isinstance(r, dict):
            return sum(r.values())
        return r

    val, grad = jax.value_and_grad(total)(net.params)
    if not np.isfinite(float(val)):
        r = objective(net.params)
        if isinstance(r, dict):
            bad = [k for k, v in r.items() if not np.isfinite(float(v))]
        else:
            bad = ["objective"]
        raise NonFiniteError(f"objective is not finite; offending terms: {', '.join(bad)}", bad)
    vec, _ = ravel_pytree(grad)
    return np.asarray(vec)


# ---------------------------------------------------------------------------
# finite-difference oracle


def _mp_forward(net, point, mp):
    h = [mp.mpf(x) for x in point]
    last = net.depth - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        nxt = []
        for row, bias in zip(W, b):
            s = mp.mpf(float(bias))
            for wv, hv in zip(row, h):
                s += mp.mpf(float(wv)) * hv
            nxt.append(mp.tanh(s) if k < last else s)
        h = nxt
    return h


def _axis_stencil(p, accuracy):
    # for even p the symmetric stencil gains one order for free
    return fd_weights(p, accuracy if p % 2 else accuracy - 1)


def fd_table(net: NetworkParams, z, orders, h, dps=None, accuracy=4):
    """Tensor-product central differences for every requested multi-index.

    With ``dps`` set, the network is evaluated in mpmath at that many digits,
    which removes cancellation error and allows tiny steps.
    """
    z = np.asarray(z, dtype=float)
    orders = _normalise(orders, net.in_dim)
    cache = {}
    if dps is not None:
        import mpmath

        ctx = mpmath.mp.clone()
        ctx.dps = dps
        hh = ctx.mpf(h)
        zz = [ctx.mpf(float(v)) for v in z]

        def value(offset):
            if offset not in cache:
                pt = [zi + oi * hh for zi, oi in zip(zz, offset)]
                cache[offset] = _mp_forward(net, pt, ctx)
            return cache[offset]
    else:
        from .network import forward

        def value(offset):
            if offset not in cache:
                cache[offset] = forward(net, z + h * np.asarray(offset, dtype=float))
            return cache[offset]

    out = DerivTable()
    for alpha in orders:
        stencils = [(_axis_stencil(p, accuracy) if p else None) for p in alpha]
        ranges = [list(zip(s.offsets, s.exact)) if s else [(0, 1)] for s in stencils]
        acc = [0] * net.out_dim
        for combo in itertools.product(*ranges):
            offset = tuple(int(o) for o, _ in combo)
            w = math.prod(c for _, c in combo)
            if w == 0.0:
                continue
            vals = value(offset)
            w = ctx.mpf(w.numerator) / w.denominator if dps is not None else float(w)
            acc = [a + w * v for a, v in zip(acc, vals)]
        scale = hh ** sum(alpha) if dps is not None else h ** sum(alpha)
        out[alpha] = np.array([float(a / scale) for a in acc])
    return out


def fd_validate(net: NetworkParams, z, alpha, h, dps=None, accuracy=4) -> float:
    """max_j |D^alpha net_j(z) - central difference estimate|."""
    if h <= 0:
        raise ValueError("step must be positive")
    alpha = tuple(alpha)
    exact = jet_eval(net, z, [alpha])[alpha]
    approx = fd_table(net, z, [alpha], h, dps=dps, accuracy=accuracy)[alpha]
    return float(np.max(np.abs(exact - approx)))


def as_network(params) -> NetworkParams:
    return from_params(params)
