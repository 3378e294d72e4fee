"""Command line entry point: training runs, sweeps, certificates and calculators.

Every subcommand that trains writes ``runs.csv`` (schema in ``RUN_COLUMNS``),
one checkpoint and, unless ``--no-bound`` is given, one certificate per run.
"""

import argparse
import csv
import io
import math
import sys
from pathlib import Path

import numpy as np

from . import certify as cert_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, dump_config, parse_config, parse_config_text
from .errors import CheckpointError, ConfigError, HypothesisError, NonFiniteError
from .quadrature import midpoint_rule, quad_bound
from .training import benchmark, make_sets, train

RUN_COLUMNS = (
    "seed", "M_int", "M_s", "M_t", "M_gamma", "widths", "xpinn", "nu",
    "Et", "Et2_pde", "Et2_div", "Et2_s", "Et2_t", "Et2_interface",
    "E", "E_pressure", "bound", "l2_bound", "mode", "status", "iterations", "config",
)
CURVE_COLUMNS = ("M_int", "M_s", "M_t", "bound", "l2_bound", "mode", "reference_seed")

EXIT_CODES = {ConfigError: 2, HypothesisError: 3, CheckpointError: 4, NonFiniteError: 5}


def fmt(v):
    """Fixed 17-significant-digit formatting, so reruns give identical bytes."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (tuple, list)):
        return "x".join(str(x) for x in v)
    return str(v)


def write_csv(path, columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c, "")) for c in columns])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def run_row(cfg, rec, cert=None):
    b = rec.loss
    nan = float("nan")
    c = rec.counts
    return {
        "seed": rec.seed, "M_int": c["M_int"], "M_s": c["M_s"], "M_t": c["M_t"],
        "M_gamma": c["M_gamma"], "widths": cfg.widths, "xpinn": cfg.xpinn, "nu": cfg.nu,
        "Et": rec.Et,
        "Et2_pde": b.pde if b else nan, "Et2_div": b.div if b else nan,
        "Et2_s": b.s if b else nan, "Et2_t": b.t if b else nan,
        "Et2_interface": b.interface if b else nan,
        "E": rec.l2, "E_pressure": rec.l2_pressure,
        "bound": cert.bound if cert else nan, "l2_bound": cert.l2_bound if cert else nan,
        "mode": cert.mode if cert else "none", "status": rec.status,
        "iterations": len(rec.history), "config": cfg.fingerprint(),
    }


def certify_model(cfg, model, mode=None, sets=None):
    sets = make_sets(cfg) if sets is None else sets
    return cert_mod.aposteriori_bound(model, sets, benchmark(cfg), mode=mode or cfg.bound_mode,
                                      grid_res=cfg.cn_grid, boundary=cfg.boundary_mode)


def train_and_record(cfg, seed, out, bound=True, sets=None, tag=""):
    sets = make_sets(cfg) if sets is None else sets
    model, rec = train(cfg, seed, sets)
    cert = None
    stem = f"{tag}seed_{seed}"
    if rec.status == "ok" and bound:
        cert = certify_model(cfg, model, sets=sets)
        p = Path(out) / "certificates" / f"{stem}.json"
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(cert.to_json(), encoding="utf-8")
    save_checkpoint(Path(out) / "checkpoints" / f"{stem}.json", model, seed=seed,
                    fingerprint=cfg.fingerprint(), config=dump_config(cfg))
    return run_row(cfg, rec, cert), cert


def _seeds(cfg, args):
    return (args.seed,) if args.seed is not None else tuple(cfg.seeds)


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def cmd_train(cfg, args):
    rows = []
    for s in _seeds(cfg, args)[:1]:
        row, cert = train_and_record(cfg, s, args.out, not args.no_bound)
        rows.append(row)
        print(f"seed {s}: Et={row['Et']:.6g} E={row['E']:.6g} bound(L2)={row['l2_bound']:.6g}")
    write_csv(Path(args.out) / "runs.csv", RUN_COLUMNS, rows)
    return 0


def cmd_ensemble(cfg, args):
    rows = []
    sets = make_sets(cfg)
    for s in _seeds(cfg, args):
        try:
            row, _ = train_and_record(cfg, s, args.out, not args.no_bound, sets)
        except Exception as exc:  # noqa: BLE001 - the ensemble carries on past a bad seed
            row = {"seed": s, "status": f"failed: {type(exc).__name__}: {exc}",
                   "config": cfg.fingerprint()}
        rows.append(row)
        _log(f"seed {s}: {row.get('status')} Et={row.get('Et')} E={row.get('E')}")
    write_csv(Path(args.out) / "runs.csv", RUN_COLUMNS, rows)
    _print_corr(rows)
    return 0


def _print_corr(rows):
    ok = [r for r in rows if r.get("status") == "ok"]
    if len(ok) >= 3:
        x = np.log([r["Et"] for r in ok])
        y = np.log([r["E"] for r in ok])
        r = float(np.corrcoef(x, y)[0, 1])
        slope = float(np.polyfit(x, y, 1)[0])
        print(f"log-log correlation {r:.4f}, slope {slope:.4f} over {len(ok)} runs")


def quad_levels(cfg, n):
    d = cfg.d
    return cfg.replace(interior=(n,) * (d + 1), initial=(2 * n,) * d,
                       boundary=(2 * n,) * d + (n,))


def cmd_sweep_quad(cfg, args):
    levels = args.levels or [10, 16, 25]
    rows, ref = [], None
    for n in levels:
        c = quad_levels(cfg, n)
        sets = make_sets(c)
        for s in _seeds(cfg, args):
            row, cert = train_and_record(c, s, args.out, not args.no_bound, sets, tag=f"M{n}_")
            rows.append(row)
            if cert is not None:
                ref = (s, cert)
            _log(f"M_int={row['M_int']} seed {s}: Et={row['Et']:.4g} E={row['E']:.4g}")
    write_csv(Path(args.out) / "runs.csv", RUN_COLUMNS, rows)
    if ref is not None:
        write_csv(Path(args.out) / "bound_curve.csv", CURVE_COLUMNS, bound_curve(cfg, ref[1], ref[0]))
    _print_means(rows, "M_int")
    return 0


def bound_curve(cfg, cert, seed, levels=None):
    """Bound of one reference run re-evaluated at other set sizes.

    Training errors and constants stay fixed, so the curve is non-increasing
    in M by construction.
    """
    d = cfg.d
    levels = levels or [4, 6, 8, 10, 13, 16, 20, 25, 32, 40, 50, 64]
    out = []
    for n in levels:
        M_int = n ** (d + 1)
        M_t = (2 * n) ** d
        M_s = 2 * d * (2 * n) ** (d - 1) * n
        c = cert_mod.with_set_sizes(cert, M_t, M_int, M_s)
        out.append({"M_int": M_int, "M_s": M_s, "M_t": M_t, "bound": c.bound,
                    "l2_bound": c.l2_bound, "mode": c.mode, "reference_seed": seed})
    return out


def cmd_sweep_width(cfg, args):
    widths = args.widths or [10, 20, 40]
    rows = []
    sets = make_sets(cfg)
    for w in widths:
        c = cfg.replace(widths=(cfg.widths[0],) + (w,) * (len(cfg.widths) - 2) + (cfg.widths[-1],))
        for s in _seeds(cfg, args):
            row, _ = train_and_record(c, s, args.out, not args.no_bound, sets, tag=f"W{w}_")
            rows.append(row)
            _log(f"width {w} seed {s}: Et={row['Et']:.4g} E={row['E']:.4g}")
    write_csv(Path(args.out) / "runs.csv", RUN_COLUMNS, rows)
    _print_means(rows, "widths")
    return 0


def _print_means(rows, key):
    groups = {}
    for r in rows:
        if r.get("status") == "ok":
            groups.setdefault(fmt(r[key]), []).append(r["E"])
    for k, v in groups.items():
        print(f"{key}={k}: mean E {np.mean(v):.6g} over {len(v)} runs")


def cmd_certify(cfg, args):
    if not args.checkpoint:
        raise ConfigError("certify needs --checkpoint", "checkpoint")
    ck = load_checkpoint(args.checkpoint)
    if ck.config:
        cfg = parse_config_text(ck.config, source=str(args.checkpoint))
    if args.boundary:
        cfg = cfg.replace(boundary_mode=args.boundary)
    cert = certify_model(cfg, ck.model, args.mode)
    from .bench import l2_error
    from .training import eval_grid
    err = l2_error(ck.model, benchmark(cfg), eval_grid(cfg))
    out = Path(args.out) / "certificates" / (Path(args.checkpoint).stem + f"_{cert.mode}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(cert.to_json(), encoding="utf-8")
    print(f"E={err.velocity:.6g} bound(L2)={cert.l2_bound:.6g} bound(L2^2)={cert.bound:.6g} "
          f"mode={cert.mode} flags={list(cert.flags)}")
    print(f"wrote {out}")
    return 0


def cmd_construct(cfg, args):
    from .construct import assemble, sobolev_error
    f = lambda X: np.sin(2 * np.pi * X[:, 0])
    F = {(0,): f, (1,): lambda X: 2 * np.pi * np.cos(2 * np.pi * X[:, 0]),
         (2,): lambda X: -(2 * np.pi) ** 2 * np.sin(2 * np.pi * X[:, 0])}
    rows = []
    for N in args.N or [6, 12, 24]:
        net, rep = assemble(f, [(0.0, 1.0)], N, args.m, args.n)
        errs = [sobolev_error(F, net, k, [(0.0, 1.0)], args.res) for k in range(3)]
        rows.append({"N": N, "width1": rep.widths[0], "width2": rep.widths[1],
                     "H0": errs[0], "H1": errs[1], "H2": errs[2], "bound_H2": rep.bound})
        save_checkpoint(Path(args.out) / "checkpoints" / f"construct_N{N}.json", net)
        print(f"N={N} widths={rep.widths} H0={errs[0]:.4g} H1={errs[1]:.4g} H2={errs[2]:.4g}")
    write_csv(Path(args.out) / "construct.csv",
              ("N", "width1", "width2", "H0", "H1", "H2", "bound_H2"), rows)
    if len(rows) >= 2:
        L = np.log([r["N"] for r in rows])
        for k in range(3):
            print(f"H{k} slope {np.polyfit(L, np.log([r[f'H{k}'] for r in rows]), 1)[0]:.3f}")
    return 0


def cmd_size_calc(cfg, args):
    if args.r is not None:
        res = cert_mod.thm31_min_size(args.d, args.r, args.tol, n=args.n, T=args.T, nu=args.nu)
        print(f"r={args.r} k={res.k} N*={res.N} widths={res.widths[0]} {res.widths[1]} "
              f"total={res.neurons}" + (" (saturated)" if res.saturated else ""))
        return 0
    w1, w2, gamma = cert_mod.thm31_widths(args.d, args.k, args.n, args.T, args.N)
    print(w1)
    print(w2)
    print(f"gamma {gamma:g}")
    return 0


def cmd_quad_test(cfg, args):
    """Midpoint rule on exp(x) cos(2y) over [0,1]^2 against its closed-form integral."""
    # exp(x) sin(y) would be a poor choice: its two leading error terms cancel
    exact = (math.e - 1) * math.sin(2.0) / 2
    c2 = 4 * math.e  # sup of all derivatives of order <= 2
    rows = []
    for n in args.levels or [4, 8, 16, 32, 64, 128]:
        pts, w, meas, _ = midpoint_rule([(0.0, 1.0), (0.0, 1.0)], (n, n))
        err = abs(float(np.sum(w * np.exp(pts[:, 0]) * np.cos(2 * pts[:, 1]))) - exact)
        rows.append({"n": n, "M": n * n, "error": err, "quad_bound": quad_bound(c2, n * n, 2, meas)})
        print(f"n={n} error={err:.6e} bound={rows[-1]['quad_bound']:.6e}")
    slope = np.polyfit(np.log([r["n"] for r in rows]), np.log([r["error"] for r in rows]), 1)[0]
    print(f"slope {slope:.4f}")
    write_csv(Path(args.out) / "quad_test.csv", ("n", "M", "error", "quad_bound"), rows)
    return 0


COMMANDS = {
    "train": cmd_train, "ensemble": cmd_ensemble, "sweep-quad": cmd_sweep_quad,
    "sweep-width": cmd_sweep_width, "certify": cmd_certify, "construct": cmd_construct,
    "size-calc": cmd_size_calc, "quad-test": cmd_quad_test,
}


def build_parser():
    p = argparse.ArgumentParser(prog="nspinn", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=sorted(COMMANDS))
    p.add_argument("--config", help="INI config file; defaults apply to missing keys")
    p.add_argument("--seed", type=int, help="single seed overriding the config's seed list")
    p.add_argument("--out", help="output directory (default: config's run.out)")
    p.add_argument("--mode", choices=("sampled", "worstcase"), help="bound constants mode")
    p.add_argument("--boundary", choices=("periodic", "dirichlet"), help="spatial boundary residual")
    p.add_argument("--no-bound", action="store_true", help="skip certificates")
    p.add_argument("--checkpoint", help="checkpoint to certify")
    p.add_argument("--levels", type=int, nargs="*", help="per-axis resolutions (sweep-quad, quad-test)")
    p.add_argument("--widths", type=int, nargs="*", help="hidden widths (sweep-width)")
    size = p.add_argument_group("size-calc")
    size.add_argument("--d", type=int, default=2)
    size.add_argument("--k", type=int, default=3)
    size.add_argument("--n", type=int, default=2)
    size.add_argument("--T", type=float, default=1.0)
    size.add_argument("--N", type=int, nargs="*", help="size-calc: N; construct: list of N")
    size.add_argument("--r", type=float, help="regularity; switches size-calc to the minimal size")
    size.add_argument("--tol", type=float, default=0.01)
    size.add_argument("--nu", type=float, default=1e-3)
    cons = p.add_argument_group("construct")
    cons.add_argument("--m", type=int, default=4)
    cons.add_argument("--res", type=int, default=40000)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config) if args.config else ExperimentConfig()
        kw = {}
        if args.mode:
            kw["bound_mode"] = args.mode
        if args.boundary:
            kw["boundary_mode"] = args.boundary
        if kw:
            cfg = cfg.replace(**kw)
        args.out = args.out or cfg.out
        if args.subcommand == "size-calc" and args.r is None:
            args.N = (args.N or [10])[0]
        return COMMANDS[args.subcommand](cfg, args)
    except tuple(EXIT_CODES) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return next(code for cls, code in EXIT_CODES.items() if isinstance(exc, cls))
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
