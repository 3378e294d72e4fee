"""Explicit two-hidden-layer tanh approximants built from finite-difference
monomial networks, polarization products and a smooth partition of unity.

Everything here produces plain ``NetworkParams`` so the rest of the package
(derivatives, checkpoints, error metrics) works on constructed networks too.
"""

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import mpmath
import numpy as np

from .deriv import jet_eval_batch, multi_indices
from .errors import HypothesisError, UnsupportedOrderError
from .network import NetworkParams
from .quadrature import midpoint_rule
from .stencil import fd_weights

EPS = np.finfo(float).eps


@lru_cache(maxsize=None)
def _tanh_taylor(K=40):
    return tuple(float(c) for c in mpmath.taylor(mpmath.tanh, 0, K))


def sigma_deriv0(p):
    """tanh^{(p)}(0)."""
    return _tanh_taylor()[p] * math.factorial(p)


def n_monomials(s, dim):
    """Number of monomials of exact degree s in ``dim`` variables."""
    return math.comb(s + dim - 1, dim - 1)


# ---------------------------------------------------------------------------
# shallow networks as explicit unit lists


@dataclass(frozen=True)
class Shallow:
    """y -> const + sum_k c_k tanh(W_k . y + b_k) with W of shape (K, dim)."""

    W: np.ndarray
    b: np.ndarray
    c: np.ndarray
    const: float = 0.0

    @property
    def width(self):
        return len(self.b)

    @property
    def dim(self):
        return self.W.shape[1]

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.dim == 1 and (y.ndim == 0 or y.shape[-1] != 1):
            y = y[..., None]
        return np.tanh(y @ self.W.T + self.b) @ self.c + self.const

    def compose(self, A, shift):
        """Precompose with the affine map x -> A x + shift."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        shift = np.atleast_1d(np.asarray(shift, dtype=float))
        return Shallow(self.W @ A, self.W @ shift + self.b, self.c, self.const)

    def scaled(self, s):
        return Shallow(self.W, self.b, s * self.c, s * self.const)

    def __add__(self, other):
        return Shallow(np.vstack([self.W, other.W]), np.concatenate([self.b, other.b]),
                       np.concatenate([self.c, other.c]), self.const + other.const)

    def to_network(self) -> NetworkParams:
        return NetworkParams((self.W, self.c[None, :]), (self.b, np.array([self.const])))


def _empty(dim):
    return Shallow(np.zeros((0, dim)), np.zeros(0), np.zeros(0), 0.0)


def _constant(dim, value):
    return Shallow(np.zeros((0, dim)), np.zeros(0), np.zeros(0), float(value))


# ---------------------------------------------------------------------------
# monomials


def _odd_units(p, n, h):
    st = fd_weights(p, n)
    sp = sigma_deriv0(p)
    s, c = [], []
    for i in range(1, st.ell + 1):
        a = st.coeffs[st.ell + i]
        if a != 0:
            # a_{-i} = -a_i and tanh is odd, so each pair folds into one unit
            s.append(i * h)
            c.append(2 * a / (sp * h ** p))
    return Shallow(np.array(s)[:, None], np.zeros(len(s)), np.array(c), 0.0)


def _eff_order(p, n):
    return n + 1 if (p + n) % 2 == 0 else n


def step_coefficients(p, n, M):
    """(c_T, c_R): truncation ~ c_T h^n and rounding ~ c_R h^{1-p} for odd p on [-M, M]."""
    n = _eff_order(p, n)
    st = fd_weights(p, n)
    q = p + n
    i = np.arange(-st.ell, st.ell + 1, dtype=float)
    mu = float(np.sum(st.weights * i ** q))
    sp = abs(sigma_deriv0(p))
    Me = max(M, 1.0)
    cT = abs(_tanh_taylor()[q] * mu) / sp * Me ** q
    cR = EPS * float(np.sum(np.abs(st.weights * i))) * Me / sp
    return cT, cR


def step_cap(p, n, M):
    """Largest sensible step: keeps every stencil argument i h y below 1/2."""
    if p % 2 == 0:
        p, M = p + 1, M + 1
    ell = (p + _eff_order(p, n) - 1) // 2
    return 0.5 / (ell * max(M, 1.0))


def tune_h(build, X, exact, target, h_max, h_min=1e-8, count=48):
    """Largest step on a geometric grid whose measured sup error is <= target.

    The a priori step size that meets a tight target is usually far below the
    point where rounding takes over, so when no step reaches the target the
    one with the smallest measured error wins. Returns (h, error).
    """
    ref = exact(X)
    best = (math.inf, h_max)
    for h in np.geomspace(h_max, h_min, count):
        err = float(np.max(np.abs(build(h)(X) - ref)))
        if err <= target:
            return float(h), err
        if err < best[0]:
            best = (err, float(h))
    return best[1], best[0]


def monomial_net(p, h, n=2, M_range=1.0, mode="auto") -> Shallow:
    """Shallow tanh approximation of y^p on [-M_range, M_range].

    Odd powers use the central stencil directly. Even powers go through
    z^p = [((z+1)^{p+1} - (z-1)^{p+1})/2 - sum_{k even < p} C(p+1,k) z^k] / (p+1),
    applied recursively; ``mode="direct"`` refuses them since tanh^{(p)}(0) = 0.
    """
    if p < 0:
        raise ValueError("power must be non-negative")
    if p == 0:
        return _constant(1, 1.0)
    if p % 2 == 1:
        return _odd_units(p, n, h)
    if mode == "direct":
        raise UnsupportedOrderError(f"tanh^({p})(0) = 0, even powers need the shift decomposition")
    up = _odd_units(p + 1, n, h)
    net = (up.compose([[1.0]], [1.0]).scaled(0.5) + up.compose([[1.0]], [-1.0]).scaled(-0.5))
    for k in range(0, p, 2):
        net = net + monomial_net(k, h, n, M_range).scaled(-math.comb(p + 1, k))
    return net.scaled(1.0 / (p + 1))


def product_net(dim, h, n=2, M_range=1.0) -> Shallow:
    """prod_i y_i on [-M, M]^dim by polarization of (sum_i e_i y_i)^dim over signs e."""
    if dim < 2:
        raise ValueError("a product needs at least two factors")
    power = monomial_net(dim, h, n, dim * M_range)
    net = _empty(dim)
    const = 0.0
    scale = 1.0 / (2 ** (dim - 1) * math.factorial(dim))
    # (-z)^s prod(-e) = z^s prod(e), so fixing e_1 = +1 halves the sum
    for tail in itertools.product((1.0, -1.0), repeat=dim - 1):
        e = np.array((1.0,) + tail)
        term = power.compose(e[None, :], [0.0]).scaled(scale * float(np.prod(e)))
        net = net + Shallow(term.W, term.b, term.c, 0.0)
        const += term.const
    return Shallow(net.W, net.b, net.c, const)


# ---------------------------------------------------------------------------
# partition of unity


def alpha_for(N, eps):
    """Steepness with alpha/N >= 1, 1 - tanh(alpha/N) <= eps, alpha^m |tanh^(m)(alpha/N)| <= eps."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    alpha = N * math.log(4 * N * N / (math.e ** 2 * eps))
    x = alpha / N
    t = math.tanh(x)
    d1 = 1 - t * t
    d2 = -2 * t * d1
    ok = (x >= 1, 1 - t <= eps * (1 + 1e-12), alpha * abs(d1) <= eps * (1 + 1e-12),
          alpha ** 2 * abs(d2) <= eps * (1 + 1e-12))
    if not all(ok):
        raise ArithmeticError(f"alpha={alpha} violates the steepness conditions {ok}")
    return alpha


@dataclass(frozen=True)
class PartitionSpec:
    N: int
    alpha: float
    box: tuple = ((0.0, 1.0),)

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N >= 2 required")
        if self.alpha / self.N < 1:
            raise ValueError("alpha / N >= 1 required")
        object.__setattr__(self, "box", tuple((float(a), float(b)) for a, b in self.box))
        self.cells  # validates the box

    @property
    def dim(self):
        return len(self.box)

    @property
    def cells(self):
        out = []
        for a, b in self.box:
            K = self.N * (b - a)
            if abs(K - round(K)) > 1e-9 or round(K) < 1:
                raise ValueError(f"N(b-a) = {K} is not a positive integer")
            out.append(int(round(K)))
        return tuple(out)


def rho(spec: PartitionSpec, j, y, axis=0):
    """rho_j along ``axis``; j runs 1..(cells on that axis)."""
    K = spec.cells[axis]
    if not 1 <= j <= K:
        raise IndexError(f"partition index {j} outside 1..{K}")
    a = spec.box[axis][0]
    y = np.asarray(y, dtype=float)
    s = lambda l: np.tanh(spec.alpha * (y - a - l / spec.N))
    if K == 1:
        return np.ones_like(y)
    if j == 1:
        return 0.5 - 0.5 * s(1)
    if j == K:
        return 0.5 * s(K - 1) + 0.5
    return 0.5 * s(j - 1) - 0.5 * s(j)


def partition_eval(spec: PartitionSpec, j, y):
    """rho_j(y) for an integer j, or Phi_j(x) = prod_i rho_{j_i}(x_i) for a multi-index j."""
    if np.isscalar(j) or np.ndim(j) == 0:
        return rho(spec, int(j), y)
    j = tuple(int(v) for v in j)
    if len(j) != spec.dim:
        raise ValueError(f"multi-index {j} does not match dimension {spec.dim}")
    x = np.asarray(y, dtype=float)
    out = np.ones(x.shape[:-1])
    for i, ji in enumerate(j):
        out = out * rho(spec, ji, x[..., i], axis=i)
    return out


def partition_units(spec: PartitionSpec):
    """First-layer rows (W, b) and, per axis, the affine read-out of every rho_j."""
    D = spec.dim
    W, b, maps = [], [], []
    for i, K in enumerate(spec.cells):
        a = spec.box[i][0]
        first = len(b)
        for l in range(1, K):
            row = np.zeros(D)
            row[i] = spec.alpha
            W.append(row)
            b.append(-spec.alpha * (a + l / spec.N))
        axis_maps = []
        for j in range(1, K + 1):
            # (list of (unit index, coefficient), constant)
            if K == 1:
                axis_maps.append(([], 1.0))
            elif j == 1:
                axis_maps.append(([(first, -0.5)], 0.5))
            elif j == K:
                axis_maps.append(([(first + K - 2, 0.5)], 0.5))
            else:
                axis_maps.append(([(first + j - 2, 0.5), (first + j - 1, -0.5)], 0.0))
        maps.append(axis_maps)
    return np.array(W).reshape(-1, D), np.array(b), maps


# ---------------------------------------------------------------------------
# local polynomials


@dataclass(frozen=True)
class LocalPoly:
    """Polynomial in t = (x - origin) / scale, as {multi-index: coefficient}."""

    coeffs: dict
    origin: tuple
    scale: tuple
    residual: float = 0.0

    @property
    def dim(self):
        return len(self.origin)

    def __call__(self, X):
        return _poly_eval(self.coeffs, _to_local(X, self.origin, self.scale))

    def derivative(self, alpha):
        """Coefficients of D^alpha in the same local variable, divided by scale^alpha."""
        out = {}
        fac = np.prod([s ** -a for s, a in zip(self.scale, alpha)])
        for g, c in self.coeffs.items():
            if all(gi >= ai for gi, ai in zip(g, alpha)):
                k = tuple(gi - ai for gi, ai in zip(g, alpha))
                mult = np.prod([math.perm(gi, ai) for gi, ai in zip(g, alpha)])
                out[k] = out.get(k, 0.0) + c * mult * fac
        return LocalPoly(out, self.origin, self.scale)


def _to_local(X, origin, scale):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1 and len(origin) == 1:
        X = X[:, None]
    return (X - np.asarray(origin)) / np.asarray(scale)


def _poly_eval(coeffs, T):
    out = np.zeros(T.shape[:-1])
    for g, c in coeffs.items():
        out = out + c * np.prod(T ** np.asarray(g), axis=-1)
    return out


def _rebase(coeffs, src_origin, src_scale, dst_origin, dst_scale):
    """Re-express a polynomial in t_src as a polynomial in t_dst (exact expansion)."""
    D = len(src_origin)
    # t_src_i = A_i t_dst_i + B_i
    A = [ds / ss for ds, ss in zip(dst_scale, src_scale)]
    B = [(do - so) / ss for do, so, ss in zip(dst_origin, src_origin, src_scale)]
    out = {}
    for g, c in coeffs.items():
        per_axis = []
        for i in range(D):
            per_axis.append([(k, math.comb(g[i], k) * A[i] ** k * B[i] ** (g[i] - k))
                             for k in range(g[i] + 1)])
        for combo in itertools.product(*per_axis):
            key = tuple(k for k, _ in combo)
            out[key] = out.get(key, 0.0) + c * float(np.prod([v for _, v in combo]))
    return out


def local_polyfit(f, cube, degree, origin=None, scale=None, oversample=3) -> LocalPoly:
    """Least-squares polynomial of total degree <= ``degree`` fitted to f on ``cube``.

    The fit runs in coordinates centred on the cube; coefficients are returned
    in powers of (x - origin)/scale, by default plain powers of x.
    """
    cube = [(float(a), float(b)) for a, b in cube]
    if any(b <= a for a, b in cube):
        raise ValueError(f"degenerate cube {cube}")
    D = len(cube)
    idx = multi_indices(D, degree)
    need = oversample * len(idx)
    g = max(degree + 1, math.ceil(need ** (1.0 / D)))
    while g ** D < need:
        g += 1
    axes = [np.linspace(a, b, g) for a, b in cube]
    X = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
    c0 = tuple((a + b) / 2 for a, b in cube)
    s0 = tuple((b - a) / 2 for a, b in cube)
    T = _to_local(X, c0, s0)
    V = np.stack([np.prod(T ** np.asarray(a), axis=-1) for a in idx], axis=-1)
    y = np.asarray(f(X), dtype=float).reshape(-1)
    sol, _, rank, _ = np.linalg.lstsq(V, y, rcond=None)
    if rank < len(idx):
        raise np.linalg.LinAlgError(f"fit matrix has rank {rank} < {len(idx)}")
    res = float(np.max(np.abs(V @ sol - y)))
    local = dict(zip(idx, sol))
    origin = tuple(0.0 for _ in range(D)) if origin is None else tuple(origin)
    scale = tuple(1.0 for _ in range(D)) if scale is None else tuple(scale)
    return LocalPoly(_rebase(local, c0, s0, origin, scale), origin, scale, res)


# ---------------------------------------------------------------------------
# assembly


def approx_constant(l, m, dim, seminorm=1.0):
    best = 0.0
    for lp in range(l + 1):
        best = max(best, math.sqrt(math.comb(dim + lp - 1, lp)) * math.sqrt(math.factorial(m - lp))
                   / math.factorial(math.ceil((m - lp) / dim)) ** (dim / 2)
                   * (3 * math.sqrt(dim) / math.pi) ** (m - lp))
    return best * seminorm


def theorem_widths(box, N, m, n):
    D = len(box)
    lengths = [b - a for a, b in box]
    w1 = (3 * math.ceil((m + n - 2) / 2) * n_monomials(m - 1, D + 1)
          + math.ceil(sum(L * (N - 1) for L in lengths) - 1e-9))
    w2 = (3 * math.ceil((D + n) / 2) * n_monomials(D + 1, D + 1)
          * math.ceil(N ** D * math.prod(lengths) - 1e-9))
    return w1, w2


@dataclass(frozen=True)
class AssemblyReport:
    widths: tuple
    theorem_widths: tuple
    padded: bool
    eps: float
    alpha: float
    eta: float
    h_monomial: float
    h_product: float
    product_target: float
    C_k: float
    beta: float
    bound: float
    q_max: float
    fit_residual: float
    cubes: int
    extras: dict = field(default_factory=dict)


def _ridge_basis(D, s):
    """Directions v_t and matrix G with y^gamma = sum_t G[gamma, t] (v_t . y)^s, |gamma| = s."""
    gammas = [g for g in multi_indices(D, s, s)]
    if D == 1:
        return np.ones((1, 1)), np.ones((1, 1)), gammas
    ts = np.linspace(-1.0, 1.0, s + 1)
    V = np.stack([np.ones_like(ts), ts], axis=-1)
    # (y1 + t y2)^s = sum_i C(s,i) t^i y1^{s-i} y2^i
    A = np.array([[math.comb(s, g[1]) * t ** g[1] for g in gammas] for t in ts])
    return V, np.linalg.inv(A), gammas


def assemble(f, box, N, m, n=2, delta=0.01, k=2, f_seminorm=1.0, f_ck=1.0, pad=True):
    """Two-hidden-layer tanh approximant sum_j q_j x^ Phi_j of f on ``box``.

    ``f`` maps points of shape (B, D) to values (B,). Returns the network and a
    report holding the internal tolerances and the resulting error bound.
    """
    box = tuple((float(a), float(b)) for a, b in box)
    D = len(box)
    if N <= 5:
        raise HypothesisError(f"N > 5 required, got {N}")
    if m < 3 or n < 2:
        raise HypothesisError(f"need m >= 3 and n >= 2, got m={m}, n={n}")
    if D > 2:
        raise HypothesisError("assembly is implemented for input dimension <= 2")
    vol = math.prod(b - a for a, b in box)
    Ck = approx_constant(k, m, D, f_seminorm)
    eps = (3 ** D * delta * min(1.0, Ck)
           / (2 ** (3 + k * D) * N ** (m + D) * max(vol, D) * max(f_ck, 1.0)))
    beta = 5 * 2 ** (k * D) * max(vol, D) * max(f_ck, 1.0) / (3 ** D * delta * min(1.0, Ck))
    eta = delta * Ck / (8 * N ** m)
    alpha = alpha_for(N, eps)
    spec = PartitionSpec(N, alpha, box)

    centre = np.array([(a + b) / 2 for a, b in box])
    half = np.array([(b - a) / 2 for a, b in box])
    to_y = (np.diag(1.0 / half), -centre / half)

    # first layer: monomials of y = (x - centre)/half, then partition units
    units = _empty(D)
    h1 = []
    feature = {}  # gamma -> (slice into unit list, coefficient vector, constant)
    for s in range(1, m):
        V, G, gammas = _ridge_basis(D, s)
        M = float(np.max(np.abs(V).sum(axis=1)))
        ys = np.linspace(-M, M, 4001)
        hs, _ = tune_h(lambda h: monomial_net(s, h, n, M), ys, lambda y: y ** s, eta,
                       step_cap(s, n, M))
        h1.append(hs)
        power = monomial_net(s, hs, n, M)
        start = units.width
        blocks = []
        for v in V:
            blk = power.compose(v[None, :], [0.0]).compose(*to_y)
            blocks.append(blk)
            units = units + Shallow(blk.W, blk.b, blk.c, 0.0)
        for gi, g in enumerate(gammas):
            coef = np.zeros(0)
            const = 0.0
            for t, blk in enumerate(blocks):
                coef = np.concatenate([coef, G[gi, t] * blk.c])
                const += G[gi, t] * blk.const
            feature[g] = (start, coef, const)
    n_mono = units.width
    Wp, bp, pmaps = partition_units(spec)
    W1 = np.vstack([units.W, Wp])
    b1 = np.concatenate([units.b, bp])
    H1 = len(b1)

    def affine_of_poly(poly):
        w = np.zeros(H1)
        c = poly.coeffs.get((0,) * D, 0.0)
        for g, a in poly.coeffs.items():
            if sum(g) == 0:
                continue
            start, coef, const = feature[g]
            w[start:start + len(coef)] += a * coef
            c += a * const
        return w, c

    # local fits on the enlarged cubes, clipped to the box
    cells = spec.cells
    polys = {}
    fit_res = 0.0
    for j in itertools.product(*[range(1, K + 1) for K in cells]):
        cube = []
        for i, ji in enumerate(j):
            a, b = box[i]
            cube.append((max(a, a + (ji - 2) / N), min(b, a + (ji + 1) / N)))
        p = local_polyfit(f, cube, m - 1, origin=tuple(centre), scale=tuple(half))
        polys[j] = p
        fit_res = max(fit_res, p.residual)

    # product range and target from sampled sizes of the q_j
    g = max(4 * m, 8)
    axes = [np.linspace(a, b, g * K + 1) for (a, b), K in zip(box, cells)]
    Xs = np.stack([mm.ravel() for mm in np.meshgrid(*axes, indexing="ij")], axis=-1)
    q_max = 1.0
    q_ck = 0.0
    for p in polys.values():
        q_max = max(q_max, float(np.abs(p(Xs)).max()))
        for a in multi_indices(D, k):
            q_ck = max(q_ck, float(np.abs(p.derivative(a)(Xs)).max()))
    target = (3 ** D * delta * Ck
              / (4 * math.sqrt(vol) * vol * N ** (D + m - k) * (q_ck + alpha ** k) ** k))
    s = D + 1
    grids = [np.linspace(-q_max, q_max, 401)] + [np.linspace(0.0, 1.0, 21)] * D
    Xp = np.stack([mm.ravel() for mm in np.meshgrid(*grids, indexing="ij")], axis=-1)
    h2, prod_err = tune_h(lambda h: product_net(s, h, n, q_max), Xp,
                          lambda X: np.prod(X, axis=-1), target, step_cap(s, n, s * q_max))
    prod = product_net(s, h2, n, q_max)

    rows_W, rows_b, out_c = [], [], []
    out_const = 0.0
    for j, p in polys.items():
        factors = [affine_of_poly(p)]
        for i, ji in enumerate(j):
            pairs, const = pmaps[i][ji - 1]
            w = np.zeros(H1)
            for u, cu in pairs:
                w[n_mono + u] += cu
            factors.append((w, const))
        Fw = np.stack([fw for fw, _ in factors])          # (s, H1)
        Fc = np.array([fc for _, fc in factors])
        rows_W.append(prod.W @ Fw)
        rows_b.append(prod.W @ Fc + prod.b)
        out_c.append(prod.c)
        out_const += prod.const
    W2 = np.vstack(rows_W)
    b2 = np.concatenate(rows_b)
    c3 = np.concatenate(out_c)

    actual = (H1, len(b2))
    thm = theorem_widths(box, N, m, n)
    padded = pad and actual[0] <= thm[0] and actual[1] <= thm[1]
    if padded:
        e1, e2 = thm[0] - actual[0], thm[1] - actual[1]
        W1 = np.vstack([W1, np.zeros((e1, D))])
        b1 = np.concatenate([b1, np.zeros(e1)])
        W2 = np.hstack([W2, np.zeros((W2.shape[0], e1))])
        W2 = np.vstack([W2, np.zeros((e2, W2.shape[1]))])
        b2 = np.concatenate([b2, np.zeros(e2)])
        c3 = np.concatenate([c3, np.zeros(e2)])
    net = NetworkParams((W1, W2, c3[None, :]), (b1, b2, np.array([out_const])))
    bound = (2 ** k * 3 ** D * (1 + delta) * math.log(beta * N ** (D + m + 2)) ** k
             * Ck * N ** (k - m))
    report = AssemblyReport(
        widths=net.widths[1:3], theorem_widths=thm, padded=padded, eps=eps, alpha=alpha,
        eta=eta, h_monomial=tuple(h1), h_product=h2, product_target=target, C_k=Ck, beta=beta,
        bound=bound, q_max=q_max, fit_residual=fit_res, cubes=len(polys),
        extras={"actual_widths": actual, "monomial_units": n_mono, "q_ck": q_ck,
                "product_error": prod_err})
    return net, report


def sobolev_error(f, net: NetworkParams, k, box, res):
    """Midpoint estimate of the H^k norm of f - net.

    ``f`` maps each multi-index with |alpha| <= k (including the zero index) to
    a callable on points of shape (B, D).
    """
    if not 0 <= k <= 2:
        raise UnsupportedOrderError("H^k errors are measured for k <= 2")
    D = len(box)
    orders = multi_indices(D, k)
    missing = [a for a in orders if a not in f]
    if missing:
        raise KeyError(f"no evaluator for derivatives {missing}")
    pts, w, _, _ = midpoint_rule(box, res)
    tab = jet_eval_batch(net, pts, orders)
    total = 0.0
    for a in orders:
        diff = np.asarray(f[a](pts), dtype=float).reshape(-1) - np.asarray(tab[a])[:, 0]
        total += float(np.sum(w * diff * diff))
    return math.sqrt(total)
