"""Two-or-more layer tanh networks in the class Theta_{L,W,R}."""

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import HypothesisWarning, ShapeError, UnsupportedOrderError

# sup over the real line of |tanh^{(k)}|, k = 0..5, from dense 1-D maximisation
SIGMA_SUP = (1.0, 1.0, 0.7698003589195009, 2.0, 4.0858855029696555, 16.0)


def sigma_cn(n: int) -> float:
    """C^n norm of tanh, i.e. the largest derivative supremum up to order n."""
    if not 0 <= n < len(SIGMA_SUP):
        raise UnsupportedOrderError(f"tanh C^n norm tabulated for n <= {len(SIGMA_SUP) - 1}")
    return max(SIGMA_SUP[: n + 1])


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NetworkParams:
    """Affine layers with tanh in between; the last layer is linear.

    ``weights[k]`` has shape (l_{k+1}, l_k) and ``biases[k]`` shape (l_{k+1},).
    """

    weights: tuple
    biases: tuple
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or len(self.weights) < 1:
            raise ShapeError("need matching, non-empty weight and bias lists")
        ws = tuple(_frozen(w) for w in self.weights)
        bs = tuple(_frozen(b) for b in self.biases)
        for k, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k and w.shape[1] != ws[k - 1].shape[0]:
                raise ShapeError(f"layer {k} expects {w.shape[1]} inputs, previous layer gives "
                                 f"{ws[k - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k} has non-finite entries")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def widths(self):
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def depth(self):
        return len(self.weights)

    @property
    def in_dim(self):
        return self.widths[0]

    @property
    def out_dim(self):
        return self.widths[-1]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @cached_property
    def params(self):
        """Parameters as a list of (W, b) jax arrays, the pytree used by the solvers."""
        import jax.numpy as jnp

        return [(jnp.asarray(w), jnp.asarray(b)) for w, b in zip(self.weights, self.biases)]

    def to_vector(self):
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def with_vector(self, vec):
        return from_vector(self.widths, vec)

    def __eq__(self, other):
        if not isinstance(other, NetworkParams):
            return NotImplemented
        return self.widths == other.widths and np.array_equal(self.to_vector(), other.to_vector())

    def __hash__(self):
        return hash((self.widths, self.to_vector().tobytes()))


def from_vector(widths, vec) -> NetworkParams:
    vec = np.asarray(vec, dtype=float).ravel()
    ws, bs, pos = [], [], 0
    for a, b in zip(widths[:-1], widths[1:]):
        ws.append(vec[pos:pos + a * b].reshape(b, a))
        pos += a * b
        bs.append(vec[pos:pos + b])
        pos += b
    if pos != vec.size:
        raise ShapeError(f"vector of length {vec.size} does not fit widths {tuple(widths)}")
    return NetworkParams(tuple(ws), tuple(bs))


def from_params(params) -> NetworkParams:
    """Inverse of ``NetworkParams.params``."""
    return NetworkParams(tuple(np.asarray(w) for w, _ in params), tuple(np.asarray(b) for _, b in params))


def zeros(widths) -> NetworkParams:
    widths = tuple(int(w) for w in widths)
    return NetworkParams(tuple(np.zeros((b, a)) for a, b in zip(widths[:-1], widths[1:])),
                         tuple(np.zeros(b) for b in widths[1:]))


def build(widths, seed: int, init: str = "glorot_uniform") -> NetworkParams:
    """Random initialisation: Glorot weights, zero biases."""
    widths = tuple(int(w) for w in widths)
    if len(widths) < 3:
        raise ShapeError(f"need input, at least one hidden and an output width, got {widths}")
    if min(widths) < 1:
        raise ShapeError(f"widths must be positive, got {widths}")
    rng = np.random.default_rng(seed)
    ws = []
    for a, b in zip(widths[:-1], widths[1:]):
        if init == "glorot_uniform":
            lim = math.sqrt(6.0 / (a + b))
            ws.append(rng.uniform(-lim, lim, size=(b, a)))
        elif init == "glorot_normal":
            ws.append(rng.normal(0.0, math.sqrt(2.0 / (a + b)), size=(b, a)))
        else:
            raise ValueError(f"unknown init scheme {init!r}")
    return NetworkParams(tuple(ws), tuple(np.zeros(b) for b in widths[1:]))


def forward(net: NetworkParams, z):
    """Evaluate the network at one point (shape (l0,)) or a batch (shape (B, l0))."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1:] != (net.in_dim,) or z.ndim > 2:
        raise ShapeError(f"expected points with {net.in_dim} coordinates, got shape {z.shape}")
    h = z
    last = net.depth - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if k < last:
            h = np.tanh(h)
    return h


def combine(nets, coeffs) -> NetworkParams:
    """Single network realising sum_i coeffs[i] * nets[i] (block-diagonal stacking)."""
    nets = list(nets)
    depth = nets[0].depth
    if any(n.depth != depth or n.in_dim != nets[0].in_dim or n.out_dim != nets[0].out_dim
           for n in nets):
        raise ShapeError("combined networks need equal depth and input/output sizes")
    ws = [np.concatenate([n.weights[0] for n in nets], axis=0)]
    bs = [np.concatenate([n.biases[0] for n in nets])]
    for k in range(1, depth - 1):
        ws.append(_block_diag([n.weights[k] for n in nets]))
        bs.append(np.concatenate([n.biases[k] for n in nets]))
    if depth > 1:
        ws.append(np.concatenate([c * n.weights[-1] for c, n in zip(coeffs, nets)], axis=1))
    else:
        ws[0] = sum(c * n.weights[0] for c, n in zip(coeffs, nets))
    bs_last = sum(c * n.biases[-1] for c, n in zip(coeffs, nets))
    if depth > 1:
        bs.append(bs_last)
    else:
        bs = [bs_last]
    return NetworkParams(tuple(ws), tuple(bs))


def _block_diag(blocks):
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


@dataclass(frozen=True)
class ThetaClass:
    L: int
    W: int
    R: float


def theta_class(net: NetworkParams) -> ThetaClass:
    R = 0.0
    for w, b in zip(net.weights, net.biases):
        R = max(R, float(np.abs(w).max(initial=0.0)), float(np.abs(b).max(initial=0.0)))
    return ThetaClass(L=net.depth, W=max(net.widths), R=R)


def cn_bound(netclass: ThetaClass, n: int, d: int, sigma_cn_value=None) -> float:
    """Worst-case C^n norm of any network in the class (Lemma C.1 style bound).

    Returns 16^L (d+1)^{2n} (e^2 n^4 W^3 R^n |sigma|_{C^n})^{nL}.
    """
    if n < 1:
        raise UnsupportedOrderError("the bound is stated for n >= 1")
    if netclass.R < 1 or netclass.W < 1:
        warnings.warn(f"bound assumes R >= 1 and W >= 1, got R={netclass.R}, W={netclass.W}",
                      HypothesisWarning, stacklevel=2)
    s = sigma_cn(n) if sigma_cn_value is None else sigma_cn_value
    L, W, R = netclass.L, netclass.W, netclass.R
    inner = math.e ** 2 * n ** 4 * W ** 3 * R ** n * s
    return 16.0 ** L * (d + 1) ** (2 * n) * inner ** (n * L)


def grid_points(box, res):
    """Tensor grid including the endpoints; ``box`` is a list of (lo, hi) pairs."""
    axes = [np.linspace(lo, hi, res) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def cn_estimate(net: NetworkParams, domain, n: int, grid_res: int):
    """Sampled C^n norm: max over grid points, outputs and |alpha| <= n of |D^alpha net|.

    Returns ``(value, grid_res)`` so callers can record the resolution used.
    """
    from .deriv import jet_eval_batch, multi_indices

    if n > 4:
        raise UnsupportedOrderError(f"derivatives above order 4 are not supported (n={n})")
    if len(domain) != net.in_dim:
        raise ShapeError(f"domain has {len(domain)} axes, network has {net.in_dim} inputs")
    pts = grid_points(domain, grid_res)
    table = jet_eval_batch(net, pts, multi_indices(net.in_dim, n))
    return max(float(np.abs(v).max()) for v in table.values()), grid_res
