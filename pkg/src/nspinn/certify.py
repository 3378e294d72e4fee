"""Computable error bounds: network-size formulas, the stability bound, the
a posteriori bound from training errors, and a priori resource requirements."""

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .errors import HypothesisError, HypothesisWarning
from .network import sigma_cn, theta_class
from .quadrature import quad_bound
from .residuals import member_apply, pde_from_jet

CERT_VERSION = 1


# ---------------------------------------------------------------------------
# network size for the residual bounds


def thm31_widths(d, k, n, T, N):
    """(first hidden width, second hidden width, weight growth exponent gamma)."""
    if k < 3 or n < 2 or not N > 5 or d < 1 or T <= 0:
        raise HypothesisError(f"need d >= 1, k >= 3, n >= 2, N > 5, T > 0; got d={d}, k={k}, "
                              f"n={n}, N={N}, T={T}")
    tn = math.ceil(T * N)
    w1 = 3 * math.ceil((k + n - 2) / 2) * math.comb(d + k - 1, d) + tn + d * N
    w2 = 3 * math.ceil((d + n) / 2) * math.comb(2 * d + 1, d) * tn * N ** d
    gamma = max(1.0, d * (2 + k * k + d) / n)
    return w1, w2, gamma


def approx_constant(l, m, dim, seminorm=1.0):
    """C_{l,m,dim,f}: the local polynomial approximation constant for |alpha| <= l."""
    best = 0.0
    for lp in range(l + 1):
        c = (math.sqrt(math.comb(dim + lp - 1, lp)) * math.sqrt(math.factorial(m - lp))
             / math.factorial(math.ceil((m - lp) / dim)) ** (dim / 2)
             * (3 * math.sqrt(dim) / math.pi) ** (m - lp))
        best = max(best, c)
    return best * seminorm


def size_constants(d, k, l, T=1.0, delta=0.01, norm=1.0, m=None):
    """(C, beta) for H^l approximation of a component on the (d+1)-dim space-time box."""
    m = k if m is None else m
    dim = d + 1
    C = approx_constant(l, m, dim, norm)
    vol = 1.0 * T
    beta = (5 * 2 ** (l * dim) * max(vol, dim) * max(norm, 1.0)
            / (3 ** dim * delta * min(1.0, C)))
    return C, beta


def residual_bounds(d, k, N, nu=1e-3, T=1.0, delta=0.01, norm=1.0):
    """The three residual bounds (momentum, divergence, initial data) at size N."""
    N = np.asarray(N, dtype=float)

    def lam(l, beta):
        return 2 ** (l + 1) * 3 ** d * (1 + delta) * np.log(beta * N ** (d + k + 2)) ** l

    Cu = {l: size_constants(d, k, l, T, delta, norm) for l in range(3)}
    Cp1 = size_constants(d, k, 1, T, delta, norm, m=k - 1)
    sd = math.sqrt(d)
    b1 = (Cp1[0] * lam(1, Cp1[1]) * N ** (2 - k)
          + Cu[1][0] * lam(1, Cu[1][1]) * (1 + sd * norm) * N ** (1 - k)
          + sd * lam(0, Cu[0][1]) * norm * Cu[0][0] * N ** (-k)
          + nu * sd * Cu[2][0] * lam(2, Cu[2][1]) * N ** (2 - k))
    b2 = sd * Cu[1][0] * lam(1, Cu[1][1]) * N ** (1 - k)
    diam = math.sqrt(d + T * T)
    inradius = 0.5 * min(1.0, T)
    trace = math.sqrt(2 * max(2 * diam, d + 1) / inradius)
    b3 = trace * Cu[1][0] * lam(1, Cu[1][1]) * N ** (1 - k)
    return b1, b2, b3


class SizeResult(NamedTuple):
    N: int
    neurons: int
    k: int
    widths: tuple
    saturated: bool
    bounds: tuple


def k_for_regularity(d, r):
    """Largest integer k with r > d/2 + 2k."""
    k = math.ceil((r - d / 2) / 2) - 1
    return k


def thm31_min_size(d, r, tol=0.01, n=2, T=1.0, nu=1e-3, norm=1.0, delta=0.01, N_max=10 ** 6):
    """Smallest N > 5 for which all three residual bounds are <= tol.

    Uses H^k norms equal to ``norm`` for every k. Returns the total neurons of
    one sub-network (sum of both hidden widths).
    """
    k = k_for_regularity(d, r)
    if k < 3:
        raise HypothesisError(f"regularity r={r} gives k={k}; need r > d/2 + 6")
    if not math.isfinite(tol):
        N = 6
        w = thm31_widths(d, k, n, T, N)
        return SizeResult(N, w[0] + w[1], k, w[:2], False, (0.0, 0.0, 0.0))
    lo = 6
    chunk = 4096
    while lo <= N_max:
        Ns = np.arange(lo, min(lo + chunk, N_max + 1))
        b = residual_bounds(d, k, Ns, nu, T, delta, norm)
        ok = (b[0] <= tol) & (b[1] <= tol) & (b[2] <= tol)
        if ok.any():
            i = int(np.argmax(ok))
            N = int(Ns[i])
            w = thm31_widths(d, k, n, T, N)
            return SizeResult(N, w[0] + w[1], k, w[:2], False, tuple(float(x[i]) for x in b))
        lo += chunk
    w = thm31_widths(d, k, n, T, N_max)
    b = residual_bounds(d, k, N_max, nu, T, delta, norm)
    return SizeResult(N_max, w[0] + w[1], k, w[:2], True, tuple(float(x) for x in b))


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class ErrorCertificate:
    """Evaluated bound on the squared L2 error of the velocity.

    ``R_*`` hold L2 norms of the residuals; in the a posteriori form they are the
    quadrature (training-error) values. ``bound`` bounds the squared error, so
    ``l2_bound`` = sqrt(bound) is the number to compare with the L2 error.
    """

    form: str
    mode: str
    d: int
    T: float
    nu: float
    grad_u_inf: float
    R_t: float = 0.0
    R_PDE: float = 0.0
    R_div: float = 0.0
    R_s: float = 0.0
    R_u: float = 0.0
    R_grad_u: float = 0.0
    R_p: float = 0.0
    C_1: float = 0.0
    D_measure: float = 1.0
    dD_measure: float = 0.0
    Gamma_measure: float = 0.0
    C_t: float = 0.0
    C_PDE: float = 0.0
    C_div: float = 0.0
    C_s: float = 0.0
    M_t: float = math.inf
    M_int: float = math.inf
    M_s: float = math.inf
    script_C: float = 0.0
    gronwall: float = 1.0
    bound: float = 0.0
    flags: tuple = ()
    extras: dict = field(default_factory=dict)

    @property
    def l2_bound(self):
        return math.sqrt(self.bound)

    def gronwall_factor(self):
        return math.exp(self.T * (2 * self.d ** 2 * self.grad_u_inf + 1))

    def compute_script_C(self):
        if self.form == "stability":
            return _stability_C(self)
        return _aposteriori_C(self)

    def recompute_bound(self):
        return self.compute_script_C() * self.T * self.gronwall_factor()

    def to_json(self):
        d = dataclasses.asdict(self)
        d["flags"] = list(self.flags)
        d["version"] = CERT_VERSION
        d["l2_bound"] = self.l2_bound
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if d.pop("version", None) != CERT_VERSION:
            raise ValueError("unsupported certificate version")
        d.pop("l2_bound", None)
        d["flags"] = tuple(d.get("flags", ()))
        return cls(**d)


def _stability_C(c):
    inner = (math.sqrt(c.D_measure) * c.R_div + (1 + c.nu) * math.sqrt(c.dD_measure) * c.R_s
             + math.sqrt(c.Gamma_measure) * ((1 + c.nu) * c.R_u + c.nu * c.R_grad_u + c.R_p))
    return c.R_t ** 2 + c.R_PDE ** 2 + c.C_1 * math.sqrt(c.T) * inner


def _aposteriori_C(c):
    d = c.d
    t_part = c.R_t ** 2 + c.C_t * c.M_t ** (-2.0 / d)
    pde_part = c.R_PDE ** 2 + c.C_PDE * c.M_int ** (-2.0 / (d + 1))
    div_part = c.R_div + c.C_div * c.M_int ** (-1.0 / (d + 1))
    s_part = (1 + c.nu) * (c.R_s + c.C_s * c.M_s ** (-1.0 / d))
    return t_part + pde_part + c.C_1 * math.sqrt(c.T) * (div_part + s_part)


def _finish(cert):
    C = cert.compute_script_C()
    g = cert.gronwall_factor()
    return dataclasses.replace(cert, script_C=C, gronwall=g, bound=C * cert.T * g)


def stability_bound(*, d, T, nu, grad_u_inf=None, R_t=0.0, R_PDE=0.0, R_div=0.0, R_s=0.0,
                    R_u=0.0, R_grad_u=0.0, R_p=0.0, C_1=1.0, D_measure=1.0, dD_measure=0.0,
                    Gamma_measure=0.0, pinn=True, mode="given", extras=None) -> ErrorCertificate:
    """Bound from residual L2 norms; for a plain PINN the interface terms are zero."""
    if grad_u_inf is None:
        raise ValueError("the stability bound needs the sup norm of the exact velocity gradient")
    norms = [R_t, R_PDE, R_div, R_s, R_u, R_grad_u, R_p]
    if any(v < 0 for v in norms):
        raise ValueError("residual norms must be non-negative")
    if pinn:
        R_u = R_grad_u = R_p = 0.0
        Gamma_measure = 0.0
    cert = ErrorCertificate("stability", mode, d, T, nu, grad_u_inf, R_t, R_PDE, R_div, R_s, R_u,
                            R_grad_u, R_p, C_1, D_measure, dD_measure, Gamma_measure,
                            extras=dict(extras or {}))
    return _finish(cert)


# ---------------------------------------------------------------------------
# residual fields as smooth per-point functions, for sampling C^2 norms


def _point_jet2(mparams, z, d):
    f = lambda y: member_apply(mparams, y)
    U = f(z)
    J = jax.jacfwd(f)(z)                     # (out, D)
    Hs = jax.hessian(f)(z)                   # (out, D, D)
    Jt = J.T[:, None, :]                     # (D, 1, out)
    H = jnp.stack([Hs[:, i, i] for i in range(d)])[:, None, :]
    return U[None, :], Jt, H


def _sq_pde(mparams, z, d, nu, rho):
    r, _ = pde_from_jet(*_point_jet2(mparams, z, d), nu, rho)
    return jnp.sum(r * r)


def _sq_div(mparams, z, d, nu, rho):
    _, dv = pde_from_jet(*_point_jet2(mparams, z, d), nu, rho)
    return jnp.sum(dv * dv)


@lru_cache(maxsize=None)
def _c2_sampler(kind, d, nu, rho, solution):
    """Jitted map (params, Z) -> max over points of |D^a g| for |a| <= 2, g the squared residual."""
    if kind == "pde":
        g = lambda p, z: _sq_pde(p, z, d, nu, rho)
    elif kind == "div":
        g = lambda p, z: _sq_div(p, z, d, nu, rho)
    elif kind == "t":
        def g(p, x):
            z = jnp.concatenate([x, jnp.zeros(1)])
            r = member_apply(p, z)[:d] - solution(z)[:d]
            return jnp.sum(r * r)
    elif kind == "s":
        def g(p, z):
            r = member_apply(p, z)[:d] - solution(z)[:d]
            return jnp.sum(r * r)
    else:
        raise ValueError(kind)

    def per_point(p, z):
        v = g(p, z)
        gr = jax.grad(g, argnums=1)(p, z)
        he = jax.hessian(g, argnums=1)(p, z)
        return v, gr, he

    return jax.jit(jax.vmap(per_point, in_axes=(None, 0)))


def _periodic_sq(d):
    def g(p, z, shift):
        f = lambda y: member_apply(p, y)
        a, b = f(z), f(z + shift)
        ja, jb = jax.jacfwd(f)(z), jax.jacfwd(f)(z + shift)
        r = jnp.concatenate([a - b, (ja[:d, :d] - jb[:d, :d]).ravel()])
        return jnp.sum(r * r)

    def per_point(p, z, shift):
        return (g(p, z, shift), jax.grad(g, argnums=1)(p, z, shift),
                jax.hessian(g, argnums=1)(p, z, shift))

    return jax.jit(jax.vmap(per_point, in_axes=(None, 0, 0)))


def _c2_max(vals, tangent=None):
    v, gr, he = (np.asarray(a) for a in vals)
    if tangent is not None:
        gr = gr[:, tangent]
        he = he[:, tangent][:, :, tangent]
    return float(max(np.abs(v).max(initial=0.0), np.abs(gr).max(initial=0.0),
                     np.abs(he).max(initial=0.0)))


def _owned(model, Z):
    chi = model.chi(Z)
    return [Z[chi[q] > 0] for q in range(chi.shape[0])]


def sampled_c2_norms(model, solution, grid_res, boundary="dirichlet", chunk=2048):
    """Dense-grid C^2 norms of the squared residuals (pde, div, t, s)."""
    d = model.d
    box = list(solution.box)
    T = solution.T
    nu, rho = model.nu, model.rho
    out = {}

    def run(fn, params, Z, *extra, tangent=None):
        best = 0.0
        for s in range(0, len(Z), chunk):
            args = [jnp.asarray(a[s:s + chunk]) for a in (Z,) + extra]
            best = max(best, _c2_max(fn(params, *args), tangent))
        return best

    Zint = _grid(box + [(0.0, T)], grid_res)
    for kind in ("pde", "div"):
        fn = _c2_sampler(kind, d, nu, rho, None)
        out[kind] = max(run(fn, model.params[q], Zq) for q, Zq in enumerate(_owned(model, Zint))
                        if len(Zq))
    Xt = _grid(box, grid_res[:d])
    Zt = np.concatenate([Xt, np.zeros((len(Xt), 1))], axis=1)
    fn = _c2_sampler("t", d, nu, rho, solution)
    out["t"] = max(run(fn, model.params[q], Zq[:, :d]) for q, Zq in enumerate(_owned(model, Zt))
                   if len(Zq))
    best = 0.0
    for i in range(d):
        face_box = [box[j] for j in range(d) if j != i] + [(0.0, T)]
        face_res = tuple(grid_res[j] for j in range(d) if j != i) + (grid_res[d],)
        F = _grid(face_box, face_res)
        tangent = [j for j in range(d + 1) if j != i]
        for side in (0, 1):
            Z = np.insert(F, i, box[i][side], axis=1)
            if boundary == "dirichlet":
                fn = _c2_sampler("s", d, nu, rho, solution)
                for q, Zq in enumerate(_owned(model, Z)):
                    if len(Zq):
                        best = max(best, run(fn, model.params[q], Zq, tangent=tangent))
            elif side == 0:
                shift = np.zeros((len(Z), d + 1))
                shift[:, i] = box[i][1] - box[i][0]
                fn = _periodic_sq(d)
                for q, Zq in enumerate(_owned(model, Z)):
                    if len(Zq):
                        best = max(best, run(fn, model.params[q], Zq, shift[:len(Zq)],
                                             tangent=tangent))
    out["s"] = best
    return out


def _grid(box, res):
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(box, res)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _refine(res):
    return tuple(2 * r - 1 for r in res)


def _net_c1_c0(model, solution, grid_res):
    """max over subnetworks of (|u_hat|_{C^1}, |p_hat|_{C^0}) on the space-time grid."""
    from .deriv import multi_indices

    d = model.d
    Z = _grid(list(solution.box) + [(0.0, solution.T)], grid_res)
    cu = cp = 0.0
    for q, Zq in enumerate(_owned(model, Z)):
        if not len(Zq):
            continue
        tab = model.member_jet(q, Zq, multi_indices(d + 1, 1))
        cu = max(cu, max(float(np.abs(v[:, :d]).max()) for v in tab.values()))
        cp = max(cp, float(np.abs(tab.value[:, d]).max()))
    return cu, cp


def worstcase_constants(model, solution):
    """Displayed right-hand sides of the constant bounds with (L, W, R) of the networks."""
    d = model.d
    cls = [theta_class(n) for n in model.nets()]
    L = max(c.L for c in cls)
    W = max(c.W for c in cls)
    R = max(c.R for c in cls)
    if R < 1:
        warnings.warn(f"worst-case constants assume R >= 1, network has R={R:.3g}",
                      HypothesisWarning, stacklevel=3)
    e2 = math.e ** 2

    def pw(base, ex):
        try:
            return base ** ex
        except OverflowError:
            return math.inf

    C1 = (solution.velocity_cn(1) + solution.pressure_cn(0)
          + (d + 1) ** 2 * pw(16 * e2 * W ** 3 * R * sigma_cn(1), L))
    Ct = solution.velocity_cn(2) ** 2 + pw(e2 * 2 ** 6 * W ** 3 * R ** 2 * sigma_cn(2), 2 * L)
    Cpde = pw(2 * e2 * 4 ** 4 * W ** 3 * R ** 4 * sigma_cn(4), 4 * L)
    Cdiv = pw(4 * e2 * 3 ** 4 * W ** 3 * R ** 3 * sigma_cn(3), 1.5 * L)
    return {"C_1": C1, "C_t": Ct, "C_PDE": Cpde, "C_div": Cdiv, "C_s": Cdiv,
            "L": L, "W": W, "R": R}


def sampled_constants(model, solution, sets, grid_res, boundary="dirichlet", check=True):
    """Constants from dense-grid sampling, with a two-resolution stability check."""
    d = model.d
    D_meas = solution.area if hasattr(solution, "area") else math.prod(
        hi - lo for lo, hi in solution.box)
    omega = D_meas * solution.T
    bdry = sets.spatial.measure
    norms = sampled_c2_norms(model, solution, grid_res, boundary)
    flags = []
    fine = None
    if check:
        fine = sampled_c2_norms(model, solution, _refine(grid_res), boundary)
        for k in norms:
            a, b = norms[k], fine[k]
            if abs(a - b) > 0.1 * max(abs(b), 1e-300):
                flags.append(f"unstable_sampling:{k}")
        norms = {k: max(norms[k], fine[k]) for k in norms}
    cu, cp = _net_c1_c0(model, solution, _refine(grid_res) if check else grid_res)
    C1 = solution.velocity_cn(1) + solution.pressure_cn(0) + cu + cp
    # C_q M^{-rate} is the midpoint bound of the squared residual
    Ct = quad_bound(norms["t"], 1, d, D_meas)
    Cpde = quad_bound(norms["pde"], 1, d + 1, omega)
    Cdiv = math.sqrt(quad_bound(norms["div"], 1, d + 1, omega))
    Cs = math.sqrt(quad_bound(norms["s"], 1, d, bdry))
    return ({"C_1": C1, "C_t": Ct, "C_PDE": Cpde, "C_div": Cdiv, "C_s": Cs,
             "c2_norms": norms, "c2_norms_fine": fine, "net_c1": cu, "net_c0_p": cp},
            flags)


def aposteriori_bound(model, sets, solution, mode="sampled", breakdown=None, grid_res=(24, 24, 12),
                      boundary="dirichlet", grad_u_inf=None, check=True) -> ErrorCertificate:
    """Training-error based bound on the squared velocity error of ``model``."""
    from .training import Problem

    if breakdown is None:
        breakdown = Problem(model, sets, solution, boundary).breakdown()
    d = model.d
    T = solution.T
    guinf = solution.grad_sup() if grad_u_inf is None else grad_u_inf
    D_meas = math.prod(hi - lo for lo, hi in solution.box)
    if mode == "sampled":
        consts, flags = sampled_constants(model, solution, sets, tuple(grid_res), boundary, check)
    elif mode in ("worstcase", "worst-case"):
        mode = "worstcase"
        consts, flags = worstcase_constants(model, solution), []
    else:
        raise ValueError(f"unknown constants mode {mode!r}")
    extras = {k: v for k, v in consts.items() if k not in ("C_1", "C_t", "C_PDE", "C_div", "C_s")}
    extras["grid_res"] = list(grid_res)
    extras["boundary"] = boundary
    extras["Et_interface_sq"] = breakdown.interface
    cert = ErrorCertificate(
        "aposteriori", mode, d, T, model.nu, guinf,
        R_t=math.sqrt(breakdown.t), R_PDE=math.sqrt(breakdown.pde), R_div=math.sqrt(breakdown.div),
        R_s=math.sqrt(breakdown.s), C_1=consts["C_1"], D_measure=D_meas,
        dD_measure=sets.spatial.measure / T, Gamma_measure=(sets.interface.measure / T
                                                            if sets.interface is not None else 0.0),
        C_t=consts["C_t"], C_PDE=consts["C_PDE"], C_div=consts["C_div"], C_s=consts["C_s"],
        M_t=sets.initial.M, M_int=sets.interior.M, M_s=sets.spatial.M, flags=tuple(flags),
        extras=_jsonable(extras))
    return _finish(cert)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def with_set_sizes(cert: ErrorCertificate, M_t, M_int, M_s) -> ErrorCertificate:
    """Same constants and training errors, different quadrature sizes."""
    return _finish(dataclasses.replace(cert, M_t=M_t, M_int=M_int, M_s=M_s))


# ---------------------------------------------------------------------------


class Requirements(NamedTuple):
    R: float
    W: float
    L: int
    M_t: float
    M_int: float
    M_s: float


def apriori_requirements(eps, d, k) -> Requirements:
    """Weight bound, width, depth and set sizes that suffice for accuracy eps."""
    gamma = 6 * (3 * d + 8)
    if k <= gamma:
        raise HypothesisError(f"need k > 6(3d+8) = {gamma}, got k={k}")
    if not 0 < eps <= 1:
        raise HypothesisError("eps must lie in (0, 1]")
    q = 1.0 + gamma / (k - gamma)
    R = eps ** (-1.0 / (k - gamma)) * math.log(1.0 / eps)
    W = eps ** (-(d + 1.0) / (k - gamma))
    return Requirements(R, W, 3, eps ** (-d * q), eps ** (-2 * (d + 1) * q), eps ** (-2 * d * q))
