import json

import pytest

from nspinn.cli import CURVE_COLUMNS, RUN_COLUMNS, main, read_csv

TINY = """
[model]
widths = 3, 6, 6, 3
[optimizer]
adam_steps = 20
lbfgs_steps = 3
[quadrature]
interior = 5, 5, 4
initial = 6, 6
boundary = 6, 6, 4
eval_res = 8, 8, 4
[run]
seeds = 0, 1
cn_grid = 6, 6, 4
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY)
    return str(p)


def test_size_calc(capsys):
    assert main(["size-calc", "--d", "2", "--k", "3", "--n", "2", "--T", "1", "--N", "10"]) == 0
    lines = capsys.readouterr().out.split()
    assert lines[:2] == ["66", "60000"]


def test_size_calc_min_size(capsys):
    assert main(["size-calc", "--d", "2", "--r", "20"]) == 0
    assert "total=" in capsys.readouterr().out


def test_size_calc_hypothesis_exit_code(capsys):
    assert main(["size-calc", "--k", "2"]) == 3
    assert "error" in capsys.readouterr().err


def test_config_errors_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[optimizer]\nlr = -1\n")
    assert main(["train", "--config", str(bad)]) == 2
    assert "lr" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.ini")]) == 1


def test_certify_needs_checkpoint(cfg, tmp_path):
    assert main(["certify", "--config", cfg, "--out", str(tmp_path)]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text('{"format": "nspinn-checkpoint", "vers')
    assert main(["certify", "--checkpoint", str(broken), "--out", str(tmp_path)]) == 4


def test_ensemble_is_byte_reproducible_and_certifiable(cfg, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["ensemble", "--config", cfg, "--out", str(a)]) == 0
    assert main(["ensemble", "--config", cfg, "--out", str(b)]) == 0
    assert (a / "runs.csv").read_bytes() == (b / "runs.csv").read_bytes()
    rows = read_csv(a / "runs.csv")
    assert list(rows[0]) == list(RUN_COLUMNS)
    assert [r["seed"] for r in rows] == ["0", "1"]
    assert all(r["status"] == "ok" and r["mode"] == "sampled" for r in rows)
    cert = json.loads((a / "certificates" / "seed_0.json").read_text())
    assert cert["l2_bound"] >= float(rows[0]["E"])
    capsys.readouterr()
    assert main(["certify", "--checkpoint", str(a / "checkpoints" / "seed_0.json"),
                 "--out", str(tmp_path / "c")]) == 0
    again = json.loads((tmp_path / "c" / "certificates" / "seed_0_sampled.json").read_text())
    assert again["bound"] == pytest.approx(cert["bound"], rel=1e-12)


def test_train_single_seed(cfg, tmp_path, capsys):
    assert main(["train", "--config", cfg, "--seed", "4", "--out", str(tmp_path), "--no-bound"]) == 0
    (row,) = read_csv(tmp_path / "runs.csv")
    assert row["seed"] == "4" and row["mode"] == "none" and row["bound"] == "nan"
    assert "seed 4" in capsys.readouterr().out


def test_sweep_quad(cfg, tmp_path):
    assert main(["sweep-quad", "--config", cfg, "--out", str(tmp_path), "--levels", "3", "4",
                 "--seed", "0"]) == 0
    rows = read_csv(tmp_path / "runs.csv")
    assert [r["M_int"] for r in rows] == ["27", "64"]
    curve = read_csv(tmp_path / "bound_curve.csv")
    assert list(curve[0]) == list(CURVE_COLUMNS)
    b = [float(r["bound"]) for r in curve]
    assert all(y <= x for x, y in zip(b, b[1:]))


def test_sweep_width(cfg, tmp_path, capsys):
    assert main(["sweep-width", "--config", cfg, "--out", str(tmp_path), "--widths", "3", "5",
                 "--seed", "1", "--no-bound"]) == 0
    rows = read_csv(tmp_path / "runs.csv")
    assert [r["widths"] for r in rows] == ["3x3x3x3", "3x5x5x3"]
    assert "mean E" in capsys.readouterr().out


def test_quad_test(tmp_path, capsys):
    assert main(["quad-test", "--out", str(tmp_path), "--levels", "4", "8", "16", "32"]) == 0
    out = capsys.readouterr().out
    slope = float(out.strip().splitlines()[-1].split()[-1])
    assert abs(slope + 2) < 0.1
    rows = read_csv(tmp_path / "quad_test.csv")
    assert all(float(r["error"]) <= float(r["quad_bound"]) for r in rows)


def test_construct(tmp_path, capsys):
    assert main(["construct", "--out", str(tmp_path), "--N", "6", "12", "--res", "4000"]) == 0
    rows = read_csv(tmp_path / "construct.csv")
    assert [r["N"] for r in rows] == ["6", "12"]
    assert float(rows[1]["H0"]) < float(rows[0]["H0"])
    assert "H2 slope" in capsys.readouterr().out
