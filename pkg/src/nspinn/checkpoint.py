"""Versioned JSON checkpoints for trained models.

Floats are written with ``repr``, the shortest decimal string that parses back
to the same double, so a save/load cycle reproduces every parameter bit.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import CheckpointError
from .network import NetworkParams
from .residuals import ModelBundle

FORMAT = "nspinn-checkpoint"
VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    model: ModelBundle
    seed: Optional[int] = None
    fingerprint: Optional[str] = None
    config: Optional[str] = None


def _net_dict(net: NetworkParams):
    return {"widths": list(net.widths), "activation": net.activation,
            "weights": [w.tolist() for w in net.weights],
            "biases": [b.tolist() for b in net.biases]}


def _net_from(d, where):
    try:
        net = NetworkParams(tuple(d["weights"]), tuple(d["biases"]), d.get("activation", "tanh"))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{where}: malformed network ({exc})") from exc
    if list(net.widths) != list(d.get("widths", net.widths)):
        raise CheckpointError(f"{where}: stored widths {d['widths']} disagree with the matrices")
    return net


def dumps(model, seed=None, fingerprint=None, config=None) -> str:
    if isinstance(model, NetworkParams):
        model = ModelBundle.single(model, nu=0.0)
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "nu": model.nu,
        "rho": model.rho,
        "subdomains": None if model.subdomains is None else [list(map(list, b))
                                                             for b in model.subdomains],
        "members": [[_net_dict(n) for n in m] for m in model.members],
        "seed": seed,
        "config_fingerprint": fingerprint,
        "config": config,
    }
    return json.dumps(doc, indent=1)


def loads(text) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint at offset {exc.pos}: {exc.msg}", exc.pos) from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointError("not a checkpoint file", 0)
    if doc.get("version") != VERSION:
        raise CheckpointError(f"checkpoint version {doc.get('version')} is not supported "
                              f"(expected {VERSION})")
    try:
        members = tuple(tuple(_net_from(n, f"member {q}") for n in m)
                        for q, m in enumerate(doc["members"]))
        subs = doc["subdomains"]
        model = ModelBundle(members, doc["nu"], doc["rho"],
                            None if subs is None else tuple(tuple(map(tuple, b)) for b in subs))
    except KeyError as exc:
        raise CheckpointError(f"missing field {exc}") from exc
    return Checkpoint(model, doc.get("seed"), doc.get("config_fingerprint"), doc.get("config"))


def save_checkpoint(path, model, seed=None, fingerprint=None, config=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(model, seed, fingerprint, config), encoding="utf-8")
    return path


def load_checkpoint(path) -> Checkpoint:
    return loads(Path(path).read_text(encoding="utf-8"))
