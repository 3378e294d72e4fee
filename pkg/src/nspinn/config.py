"""Experiment configuration: an INI file with flat sections, validated into a dataclass.

Example::

    [benchmark]
    nu = 0.01
    box = 0.5, 4.5, 0.5, 4.5
    T = 1

    [model]
    widths = 3, 20, 20, 3
    xpinn = false

    [quadrature]
    interior = 16, 16, 16

    [optimizer]
    adam_steps = 1500
    lbfgs_steps = 300

    [run]
    seeds = 0, 1, 2
"""

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields

from .errors import ConfigError


def _ints(s):
    return tuple(int(v) for v in str(s).replace(",", " ").split())


def _floats(s):
    return tuple(float(v) for v in str(s).replace(",", " ").split())


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    # benchmark
    nu: float = 0.01
    rho: float = 1.0
    box: tuple = (0.5, 4.5, 0.5, 4.5)
    T: float = 1.0
    # model
    widths: tuple = (3, 20, 20, 3)
    architecture: str = "shared"
    init: str = "glorot_uniform"
    xpinn: bool = False
    split_axis: int = 0
    split_value: float = 2.5
    interface_res: tuple = (30, 10)
    # quadrature, counts per axis in the order x_1..x_d, t
    interior: tuple = (16, 16, 16)
    initial: tuple = (32, 32)
    boundary: tuple = (32, 32, 16)
    eval_res: tuple = (40, 40, 20)
    # optimiser
    adam_steps: int = 1500
    lr: float = 8e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lbfgs_steps: int = 300
    memory: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    gtol: float = 1e-10
    # loss weights
    w_pde: float = 1.0
    w_div: float = 1.0
    w_s: float = 1.0
    w_t: float = 1.0
    w_interface: float = 1.0
    # run
    seeds: tuple = (0,)
    boundary_mode: str = "dirichlet"
    bound_mode: str = "sampled"
    cn_grid: tuple = (24, 24, 12)
    out: str = "results"

    @property
    def space_box(self):
        b = self.box
        return tuple((b[2 * i], b[2 * i + 1]) for i in range(len(b) // 2))

    @property
    def d(self):
        return len(self.box) // 2

    @property
    def loss_weights(self):
        return {"pde": self.w_pde, "div": self.w_div, "s": self.w_s, "t": self.w_t,
                "interface": self.w_interface}

    def replace(self, **kw):
        cfg = dataclasses.replace(self, **kw)
        validate(cfg)
        return cfg

    def fingerprint(self):
        """Short hash of every setting except seeds and output location."""
        d = dataclasses.asdict(self)
        d.pop("seeds")
        d.pop("out")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# section -> key -> (field name, parser)
_SCHEMA = {
    "benchmark": {"nu": float, "rho": float, "box": _floats, "T": float},
    "model": {"widths": _ints, "architecture": str, "init": str, "xpinn": _bool,
              "split_axis": int, "split_value": float, "interface_res": _ints},
    "quadrature": {"interior": _ints, "initial": _ints, "boundary": _ints, "eval_res": _ints},
    "optimizer": {"adam_steps": int, "lr": float, "beta1": float, "beta2": float,
                  "adam_eps": float, "lbfgs_steps": int, "memory": int, "c1": float,
                  "c2": float, "gtol": float},
    "loss": {"w_pde": float, "w_div": float, "w_s": float, "w_t": float, "w_interface": float},
    "run": {"seeds": _ints, "boundary_mode": str, "bound_mode": str, "cn_grid": _ints,
            "out": str},
}


def validate(cfg: ExperimentConfig):
    def need(ok, key, msg):
        if not ok:
            raise ConfigError(f"{key}: {msg}", key)

    d = len(cfg.box) // 2
    need(len(cfg.box) % 2 == 0 and d >= 1, "box", "needs lo, hi pairs")
    need(all(cfg.box[2 * i + 1] > cfg.box[2 * i] for i in range(d)), "box", "each hi must exceed lo")
    need(cfg.nu >= 0, "nu", "must be >= 0")
    need(cfg.rho > 0, "rho", "must be > 0")
    need(cfg.T > 0, "T", "must be > 0")
    need(len(cfg.widths) >= 3 and min(cfg.widths) >= 1, "widths", "need input, hidden and output widths >= 1")
    need(cfg.widths[0] == d + 1, "widths", f"input width must be d+1 = {d + 1}")
    if cfg.architecture == "shared":
        need(cfg.widths[-1] == d + 1, "widths", f"shared mode needs d+1 = {d + 1} outputs")
    need(cfg.architecture in ("shared", "per-component"), "architecture", "shared or per-component")
    need(cfg.init in ("glorot_uniform", "glorot_normal"), "init", "glorot_uniform or glorot_normal")
    need(0 <= cfg.split_axis < d, "split_axis", "must index a spatial axis")
    if cfg.xpinn:
        lo, hi = cfg.box[2 * cfg.split_axis], cfg.box[2 * cfg.split_axis + 1]
        need(lo < cfg.split_value < hi, "split_value", "must lie strictly inside the box")
    need(len(cfg.interface_res) == d and min(cfg.interface_res) > 0, "interface_res",
         f"{d} positive counts")
    for key, n in (("interior", d + 1), ("initial", d), ("boundary", d + 1), ("eval_res", d + 1),
                   ("cn_grid", d + 1)):
        v = getattr(cfg, key)
        need(len(v) == n and min(v) > 0, key, f"needs {n} positive counts")
    need(cfg.adam_steps >= 0, "adam_steps", "must be >= 0")
    need(cfg.lbfgs_steps >= 0, "lbfgs_steps", "must be >= 0")
    need(cfg.lr > 0, "lr", "must be > 0")
    need(0 <= cfg.beta1 < 1 and 0 <= cfg.beta2 < 1, "beta1", "betas must lie in [0, 1)")
    need(cfg.adam_eps > 0, "adam_eps", "must be > 0")
    need(cfg.memory >= 1, "memory", "must be >= 1")
    need(0 < cfg.c1 < cfg.c2 < 1, "c1", "need 0 < c1 < c2 < 1")
    need(cfg.gtol >= 0, "gtol", "must be >= 0")
    for k in ("w_pde", "w_div", "w_s", "w_t", "w_interface"):
        need(getattr(cfg, k) >= 0, k, "must be >= 0")
    need(len(cfg.seeds) >= 1 and len(set(cfg.seeds)) == len(cfg.seeds), "seeds", "need distinct seeds")
    need(cfg.boundary_mode in ("dirichlet", "periodic"), "boundary_mode", "dirichlet or periodic")
    need(cfg.bound_mode in ("sampled", "worstcase"), "bound_mode", "sampled or worstcase")
    return cfg


def parse_config_text(text, source="<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    values = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]", section)
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}", f"{section}.{key}")
            try:
                values[key] = _SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: {exc}", f"{section}.{key}") from exc
    return validate(ExperimentConfig(**values))


def parse_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    """INI text that parses back to ``cfg``."""
    def fmt(v):
        if isinstance(v, tuple):
            return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        if isinstance(v, bool):
            return "true" if v else "false"
        return repr(v) if isinstance(v, float) else str(v)

    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        lines += [f"{k} = {fmt(getattr(cfg, k))}" for k in keys]
        lines.append("")
    return "\n".join(lines)


CONFIG_FIELDS = tuple(f.name for f in fields(ExperimentConfig))
