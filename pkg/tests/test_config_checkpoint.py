import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nspinn.checkpoint import dumps, load_checkpoint, loads, save_checkpoint
from nspinn.config import ExperimentConfig, dump_config, parse_config, parse_config_text
from nspinn.errors import CheckpointError, ConfigError
from nspinn.network import build
from nspinn.residuals import ModelBundle, split_box
from nspinn.training import init_model


def test_empty_config_gives_defaults():
    cfg = parse_config_text("")
    assert cfg == ExperimentConfig()
    assert cfg.lr == 8e-4
    assert cfg.widths == (3, 20, 20, 3)


@pytest.mark.parametrize("text,key", [
    ("[optimizer]\nlr = -1\n", "lr"),
    ("[optimizer]\nlearning_rate = 0.1\n", "optimizer.learning_rate"),
    ("[physics]\nnu = 1\n", "physics"),
    ("[model]\nwidths = 2, 5, 3\n", "widths"),
    ("[run]\nseeds = 1, 1\n", "seeds"),
    ("[optimizer]\nadam_steps = lots\n", "optimizer.adam_steps"),
])
def test_bad_configs_name_the_key(text, key):
    with pytest.raises(ConfigError) as err:
        parse_config_text(text)
    assert key in str(err.value)


def test_xpinn_config_builds_two_subdomains():
    cfg = parse_config_text("[model]\nxpinn = true\nsplit_value = 2.5\ninterface_res = 30, 10\n")
    model = init_model(cfg, 0)
    assert model.is_xpinn and len(model.members) == 2
    assert model.subdomains == split_box(cfg.space_box, 0, 2.5)
    from nspinn.training import make_sets

    assert make_sets(cfg).interface.M == 300


def test_dump_parses_back(tmp_path):
    cfg = ExperimentConfig(nu=0.1, seeds=(3, 4), xpinn=True, lr=1.25e-3, widths=(3, 7, 9, 3))
    p = tmp_path / "c.ini"
    p.write_text(dump_config(cfg))
    assert parse_config(p) == cfg


def test_fingerprint_ignores_seeds_only():
    a = ExperimentConfig()
    assert a.fingerprint() == a.replace(seeds=(5, 6)).fingerprint()
    assert a.fingerprint() != a.replace(nu=0.1).fingerprint()


@given(st.lists(st.integers(1, 6), min_size=1, max_size=3), st.integers(0, 2 ** 31 - 1))
def test_checkpoint_round_trip_is_bitwise(hidden, seed):
    net = build((3, *hidden, 3), seed)
    ck = loads(dumps(ModelBundle.single(net, 0.01), seed=seed, fingerprint="abc"))
    assert ck.model.nets()[0].to_vector().tobytes() == net.to_vector().tobytes()
    assert ck.seed == seed and ck.fingerprint == "abc"


def test_xpinn_checkpoint(tmp_path):
    a, b = build((3, 4, 3), 1), build((3, 4, 3), 2)
    m = ModelBundle.xpinn([a, b], split_box(((0.5, 4.5), (0.5, 4.5)), 0, 2.5), 0.01)
    p = save_checkpoint(tmp_path / "x" / "m.json", m, seed=1)
    back = load_checkpoint(p).model
    assert back.subdomains == m.subdomains and back.nu == m.nu
    assert all(x == y for x, y in zip(back.nets(), m.nets()))


def test_corrupt_checkpoints():
    text = dumps(build((3, 4, 3), 0))
    with pytest.raises(CheckpointError) as err:
        loads(text[: len(text) // 2])
    assert err.value.offset is not None and err.value.offset > 0
    with pytest.raises(CheckpointError):
        loads(text.replace('"version": 1', '"version": 99'))
    with pytest.raises(CheckpointError):
        loads('{"format": "something-else"}')
    doc = json.loads(text)
    doc["members"][0][0]["widths"] = [3, 5, 3]
    with pytest.raises(CheckpointError, match="disagree"):
        loads(json.dumps(doc))
    del doc["members"]
    with pytest.raises(CheckpointError, match="members"):
        loads(json.dumps(doc))


def test_certificate_recomputes_from_checkpoint(tmp_path):
    from nspinn.bench import TaylorGreen
    from nspinn.certify import aposteriori_bound
    from nspinn.quadrature import boundary_sets, midpoint_interior
    from nspinn.training import TrainingSets

    tg = TaylorGreen()
    bs = boundary_sets(tg.box, 1.0, (5, 5, 3))
    sets = TrainingSets(midpoint_interior(tg.box, 1.0, (5, 5, 3)), bs.spatial, bs.initial)
    model = ModelBundle.single(build((3, 5, 3), 4), tg.nu)
    c1 = aposteriori_bound(model, sets, tg, grid_res=(6, 6, 4))
    back = load_checkpoint(save_checkpoint(tmp_path / "m.json", model)).model
    c2 = aposteriori_bound(back, sets, tg, grid_res=(6, 6, 4))
    assert c2.bound == pytest.approx(c1.bound, rel=1e-12)
    assert dataclasses.asdict(c1) == dataclasses.asdict(c2)
