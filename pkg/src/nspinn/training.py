"""Training loss assembly, Adam, L-BFGS and the single-run / ensemble drivers."""

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np
from jax.flatten_util import ravel_pytree
from scipy.optimize import line_search

from .bench import TaylorGreen, l2_error
from .errors import NonFiniteError
from .network import build
from .quadrature import Interface, QuadratureSet, boundary_sets, midpoint_interior
from .residuals import ModelBundle, member_apply, member_jet2, pde_from_jet, split_box

TERMS = ("pde", "div", "s", "t", "interface")
DEFAULT_WEIGHTS = {k: 1.0 for k in TERMS}


@dataclass(frozen=True)
class LossBreakdown:
    """Squared training-error components and the weights that combine them."""

    pde: float
    div: float
    s: float
    t: float
    interface: float = 0.0
    weights: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)

    @property
    def components(self):
        return {k: getattr(self, k) for k in TERMS}

    @property
    def total(self):
        return float(sum(w * getattr(self, k) for k, w in zip(TERMS, self.weights)))

    @property
    def Et(self):
        return math.sqrt(max(self.total, 0.0))

    def as_dict(self):
        d = self.components
        d["total"] = self.total
        return d


@dataclass(frozen=True)
class TrainingSets:
    interior: QuadratureSet
    spatial: QuadratureSet
    initial: QuadratureSet
    interface: Optional[QuadratureSet] = None

    @property
    def counts(self):
        return {"M_int": self.interior.M, "M_s": self.spatial.M, "M_t": self.initial.M,
                "M_gamma": self.interface.M if self.interface is not None else 0}


class Problem:
    """Everything the jitted loss needs, precomputed on the host.

    Points are partitioned by owning subdomain with their chi weights, so each
    subnetwork is evaluated only where it contributes.
    """

    def __init__(self, model: ModelBundle, sets: TrainingSets, solution, boundary="dirichlet",
                 weights=None):
        if (sets.interface is not None) != model.is_xpinn:
            raise ValueError("an interface set is required exactly when the model is decomposed")
        if boundary not in ("dirichlet", "periodic"):
            raise ValueError(f"unknown boundary mode {boundary!r}")
        self.model, self.sets, self.solution, self.boundary = model, sets, solution, boundary
        self.weights = dict(DEFAULT_WEIGHTS, **(weights or {}))
        self.d = model.d
        self.n_members = len(model.members)
        data = {}
        self._M = {}
        for name in ("interior", "spatial", "initial"):
            qs = getattr(sets, name)
            chi = model.chi(qs.points)
            groups = []
            for q in range(self.n_members):
                idx = np.nonzero(chi[q] > 0)[0]
                groups.append({"idx": jnp.asarray(idx), "chi": jnp.asarray(chi[q][idx]),
                               "Z": jnp.asarray(qs.points[idx])})
            data[name] = {"groups": groups, "w": jnp.asarray(qs.weights)}
            self._M[name] = qs.M
        data["initial"]["target"] = jnp.asarray(np.asarray(solution(sets.initial.points))[:, :self.d])
        if boundary == "dirichlet":
            data["spatial"]["target"] = jnp.asarray(np.asarray(solution(sets.spatial.points))[:, :self.d])
        else:
            data["spatial"]["twin"] = jnp.asarray(sets.spatial.twin)
        if model.is_xpinn:
            data["interface"] = {"Z": jnp.asarray(sets.interface.points),
                                 "w": jnp.asarray(sets.interface.weights)}
        self.data = data
        self._flat0, self._unravel = ravel_pytree(model.params)
        self._terms = jax.jit(self._terms_impl)
        self._vg = jax.jit(jax.value_and_grad(self._flat_total))

    # -- pure functions -----------------------------------------------------
    def _blend(self, parts, M, width):
        out = jnp.zeros((M, width))
        for g, vals in parts:
            out = out.at[g["idx"]].add(g["chi"][:, None] * vals.reshape(len(g["chi"]), width))
        return out

    def _terms_impl(self, params, data):
        d, nu, rho = self.d, self.model.nu, self.model.rho
        spatial_dirs = tuple(range(d))
        # interior
        di = data["interior"]
        pde_parts, div_parts = [], []
        for q, g in enumerate(di["groups"]):
            U, J, H = member_jet2(params[q], g["Z"], spatial_dirs)
            r, dv = pde_from_jet(U, J, H, nu, rho)
            pde_parts.append((g, r))
            div_parts.append((g, dv))
        R = self._blend(pde_parts, self._M["interior"], d)
        Rd = self._blend(div_parts, self._M["interior"], 1)
        e_pde = jnp.sum(di["w"] * jnp.sum(R * R, axis=1))
        e_div = jnp.sum(di["w"] * Rd[:, 0] ** 2)
        # initial
        dt = data["initial"]
        V = self._blend([(g, member_apply(params[q], g["Z"])) for q, g in enumerate(dt["groups"])],
                        self._M["initial"], d + 1)
        rt = V[:, :d] - dt["target"]
        e_t = jnp.sum(dt["w"] * jnp.sum(rt * rt, axis=1))
        # spatial boundary
        ds = data["spatial"]
        if self.boundary == "dirichlet":
            V = self._blend([(g, member_apply(params[q], g["Z"])) for q, g in enumerate(ds["groups"])],
                            self._M["spatial"], d + 1)
            rs = V[:, :d] - ds["target"]
            e_s = jnp.sum(ds["w"] * jnp.sum(rs * rs, axis=1))
        else:
            parts = []
            for q, g in enumerate(ds["groups"]):
                U, J, _ = member_jet2(params[q], g["Z"], ())
                grads = jnp.concatenate([J[i][:, :d] for i in range(d)], axis=1)
                parts.append((g, jnp.concatenate([U, grads], axis=1)))
            V = self._blend(parts, self._M["spatial"], d + 1 + d * d)
            rs = V - V[ds["twin"]]
            e_s = jnp.sum(ds["w"] * jnp.sum(rs * rs, axis=1))
        out = {"pde": e_pde, "div": e_div, "s": e_s, "t": e_t, "interface": jnp.asarray(0.0)}
        if "interface" in data:
            Zg = data["interface"]["Z"]
            Ua, Ja, Ha = member_jet2(params[0], Zg, spatial_dirs)
            Ub, Jb, Hb = member_jet2(params[1], Zg, spatial_dirs)
            ra, _ = pde_from_jet(Ua, Ja, Ha, nu, rho)
            rb, _ = pde_from_jet(Ub, Jb, Hb, nu, rho)
            jump = jnp.sum((Ua - Ub) ** 2, axis=1) + jnp.sum((ra - rb) ** 2, axis=1)
            jump = jump + sum(jnp.sum((Ja[i][:, :d] - Jb[i][:, :d]) ** 2, axis=1) for i in range(d))
            # each subnetwork is compared with the average, hence the factor 1/2
            out["interface"] = 0.5 * jnp.sum(data["interface"]["w"] * jump)
        return out

    def _total(self, params, data):
        terms = self._terms_impl(params, data)
        return sum(self.weights[k] * terms[k] for k in TERMS)

    def _flat_total(self, vec, data):
        return self._total(self._unravel(vec), data)

    # -- host-side API ------------------------------------------------------
    @property
    def theta0(self):
        return np.asarray(self._flat0)

    def unravel(self, vec):
        return self._unravel(jnp.asarray(vec))

    def bundle(self, vec):
        return self.model.with_params(self.unravel(vec))

    def breakdown(self, vec=None) -> LossBreakdown:
        params = self.model.params if vec is None else self.unravel(vec)
        terms = {k: float(v) for k, v in self._terms(params, self.data).items()}
        bad = [k for k, v in terms.items() if not math.isfinite(v)]
        if bad:
            raise NonFiniteError(f"non-finite loss terms: {', '.join(bad)}", bad)
        return LossBreakdown(**terms, weights=tuple(self.weights[k] for k in TERMS))

    def value_and_grad(self, vec):
        v, g = self._vg(jnp.asarray(vec), self.data)
        return float(v), np.asarray(g)

    def value(self, vec):
        return self.value_and_grad(vec)[0]


def loss(model: ModelBundle, sets: TrainingSets, weights=None, solution=None, boundary="dirichlet"):
    """Loss breakdown of ``model`` on ``sets``; ``solution`` supplies initial/boundary data."""
    return Problem(model, sets, solution, boundary, weights).breakdown()


# ---------------------------------------------------------------------------
# optimisers on flat parameter vectors


def _vg_of(loss_fn):
    if hasattr(loss_fn, "value_and_grad"):
        return loss_fn.value_and_grad
    vg = jax.jit(jax.value_and_grad(lambda v: jnp.asarray(loss_fn(v), dtype=float).sum()))

    def f(x):
        v, g = vg(jnp.asarray(x, dtype=float))
        return float(v), np.asarray(g)

    return f


@dataclass
class OptResult:
    theta: np.ndarray
    history: list
    status: str
    iterations: int
    records: list = field(default_factory=list)


def adam_run(theta0, loss_fn, steps, lr=8e-4, betas=(0.9, 0.999), eps=1e-8) -> OptResult:
    """Bias-corrected Adam. ``history[k]`` is the loss before update k+1.

    Stops early with status 'diverged' if the loss stops being finite; the
    parameters from before the offending evaluation are returned.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    vg = _vg_of(loss_fn)
    theta = np.array(theta0, dtype=float, copy=True)
    shape = theta.shape
    theta = theta.ravel()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = betas
    history = []
    for k in range(1, steps + 1):
        f, g = vg(theta.reshape(shape))
        g = np.asarray(g, dtype=float).ravel()
        if not (math.isfinite(f) and np.all(np.isfinite(g))):
            return OptResult(theta.reshape(shape), history, "diverged", k - 1)
        history.append(f)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** k)
        vhat = v / (1 - b2 ** k)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
    return OptResult(theta.reshape(shape), history, "max_iter", steps)


class _Memo:
    """Caches the last value/gradient pairs so the line search never recomputes."""

    def __init__(self, vg):
        self.vg = vg
        self.cache = {}
        self.evals = 0

    def __call__(self, x):
        key = x.tobytes()
        if key not in self.cache:
            if len(self.cache) > 8:
                self.cache.clear()
            self.evals += 1
            self.cache[key] = self.vg(x)
        return self.cache[key]

    def f(self, x):
        return self(x)[0]

    def g(self, x):
        return self(x)[1]


def lbfgs_run(theta0, loss_fn, max_iter, memory=10, wolfe=(1e-4, 0.9), gtol=1e-10) -> OptResult:
    """L-BFGS with the two-loop recursion and a strong-Wolfe line search.

    The line search is scipy's cubic-interpolation implementation. Every
    accepted step is logged in ``records`` as (f0, slope0, alpha, f1, slope1).
    """
    if memory < 1:
        raise ValueError("memory must be >= 1")
    c1, c2 = wolfe
    memo = _Memo(_vg_of(loss_fn))
    x = np.array(theta0, dtype=float, copy=True).ravel()
    f, g = memo(x)
    history, records = [f], []
    S, Y = [], []
    if not np.isfinite(f):
        return OptResult(x, history, "diverged", 0)
    status = "max_iter"
    k = 0
    while k < max_iter:
        if np.max(np.abs(g)) < gtol:
            status = "converged"
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y in reversed(list(zip(S, Y))):
            rho = 1.0 / np.dot(y, s)
            a = rho * np.dot(s, q)
            q -= a * y
            alphas.append((rho, a))
        if S:
            gamma = np.dot(S[-1], Y[-1]) / np.dot(Y[-1], Y[-1])
        else:
            gamma = min(1.0, 1.0 / max(np.sum(np.abs(g)), 1e-300))
        r = gamma * q
        for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
            b = rho * np.dot(y, r)
            r += s * (a - b)
        p = -r
        slope0 = float(np.dot(g, p))
        if slope0 >= 0:
            # lost descent; restart from steepest descent
            S, Y = [], []
            p = -g
            slope0 = float(np.dot(g, p))
        alpha, _, _, f_new, _, slope1 = line_search(memo.f, memo.g, x, p, gfk=g, old_fval=f,
                                                    c1=c1, c2=c2, maxiter=20)
        if alpha is None or f_new is None or not np.isfinite(f_new):
            status = "line_search_failed"
            break
        x_new = x + alpha * p
        f_new, g_new = memo(x_new)
        slope1 = float(np.dot(g_new, p))
        records.append((f, slope0, float(alpha), f_new, slope1))
        s, y = x_new - x, g_new - g
        if np.dot(s, y) > 1e-12 * np.dot(y, y):
            S.append(s)
            Y.append(y)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        x, f, g = x_new, f_new, g_new
        history.append(f)
        k += 1
    return OptResult(x, history, status, k, records)


# ---------------------------------------------------------------------------
# drivers


@dataclass(frozen=True)
class RunRecord:
    seed: int
    loss: Optional[LossBreakdown]
    initial_loss: Optional[LossBreakdown]
    l2: float
    l2_pressure: float
    history: tuple
    counts: dict
    status: str = "ok"
    wall_time: float = field(default=0.0, compare=False)
    model: Optional[ModelBundle] = field(default=None, compare=False, repr=False)

    @property
    def Et(self):
        return self.loss.Et if self.loss is not None else float("nan")


def make_sets(cfg) -> TrainingSets:
    box = cfg.space_box
    interior = midpoint_interior(box, cfg.T, cfg.interior)
    iface = None
    if cfg.xpinn:
        iface = Interface(cfg.split_axis, cfg.split_value, cfg.interface_res)
    bs = boundary_sets(box, cfg.T, cfg.boundary, initial_res=cfg.initial, interface=iface)
    return TrainingSets(interior, bs.spatial, bs.initial, bs.interface)


def benchmark(cfg) -> TaylorGreen:
    return TaylorGreen(nu=cfg.nu, rho=cfg.rho, box=cfg.space_box, T=cfg.T)


def init_model(cfg, seed) -> ModelBundle:
    d = cfg.d
    n_members = 2 if cfg.xpinn else 1

    def member(s):
        if cfg.architecture == "shared":
            return (build(cfg.widths, s, cfg.init),)
        w = cfg.widths[:-1] + (1,)
        return tuple(build(w, s * 1000 + j, cfg.init) for j in range(d + 1))

    # subnetworks get decorrelated seeds derived from the run seed
    members = tuple(member(seed if n_members == 1 else seed * 7919 + q) for q in range(n_members))
    if cfg.xpinn:
        boxes = split_box(cfg.space_box, cfg.split_axis, cfg.split_value)
        return ModelBundle.xpinn(members, boxes, cfg.nu, cfg.rho)
    return ModelBundle(members, cfg.nu, cfg.rho)


def eval_grid(cfg):
    return midpoint_interior(cfg.space_box, cfg.T, cfg.eval_res)


def train(cfg, seed=None, sets=None):
    """Adam then L-BFGS on one seed; returns the trained bundle and its RunRecord."""
    seed = cfg.seeds[0] if seed is None else seed
    t0 = time.perf_counter()
    tg = benchmark(cfg)
    sets = make_sets(cfg) if sets is None else sets
    model = init_model(cfg, seed)
    prob = Problem(model, sets, tg, cfg.boundary_mode, cfg.loss_weights)
    theta = prob.theta0
    initial = prob.breakdown(theta)
    history = []
    status = "ok"
    if cfg.adam_steps:
        res = adam_run(theta, prob, cfg.adam_steps, cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps)
        theta, history = res.theta, history + res.history
        if res.status == "diverged":
            status = "adam_diverged"
    if cfg.lbfgs_steps and status == "ok":
        res = lbfgs_run(theta, prob, cfg.lbfgs_steps, cfg.memory, (cfg.c1, cfg.c2), cfg.gtol)
        theta, history = res.theta, history + res.history[1:]
        if res.status not in ("max_iter", "converged"):
            status = f"lbfgs_{res.status}"
    final = prob.breakdown(theta)
    bundle = prob.bundle(theta)
    err = l2_error(bundle, tg, eval_grid(cfg))
    rec = RunRecord(seed=int(seed), loss=final, initial_loss=initial, l2=err.velocity,
                    l2_pressure=err.pressure, history=tuple(float(h) for h in history),
                    counts=sets.counts, status=status, wall_time=time.perf_counter() - t0,
                    model=bundle)
    return bundle, rec


def ensemble(cfg, seeds=None, sets=None, progress=None):
    """Independent runs over ``seeds``; a failing run is recorded and skipped."""
    seeds = tuple(cfg.seeds if seeds is None else seeds)
    if len(set(seeds)) != len(seeds):
        raise ValueError("ensemble seeds must be distinct")
    sets = make_sets(cfg) if sets is None else sets
    out = []
    for s in seeds:
        try:
            _, rec = train(cfg, s, sets)
        except Exception as exc:  # noqa: BLE001 - one bad seed must not sink the ensemble
            rec = RunRecord(seed=int(s), loss=None, initial_loss=None, l2=float("nan"),
                            l2_pressure=float("nan"), history=(), counts=sets.counts,
                            status=f"failed: {type(exc).__name__}: {exc}")
        out.append(rec)
        if progress is not None:
            progress(rec)
    return out
