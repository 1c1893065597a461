import csv
import json
import math

import numpy as np
import pytest

from embedmedia.cli import main
from embedmedia.design import ParticleRecipe, capacitance_ball
from embedmedia.manybody import ParticleSet, relative_volume
from embedmedia.medium import BoxDomain

CUBE = {"lo": [-0.5, -0.5, -0.5], "hi": [0.5, 0.5, 0.5], "grid_shape": [8, 8, 8]}


def write_config(tmp_path, name="cfg.json", **overrides):
    data = {
        "domain": CUBE,
        "k": 1.0,
        "alpha": [0, 0, 1],
        "n0": "vacuum",
        "target_n": -1.0,
        "schedule": {"M": [8, 27, 64]},
        "seed": 3,
        "output_dir": str(tmp_path / "out"),
    }
    data.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def run(*argv):
    return main([str(a) for a in argv])


def test_design_negative_index(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run("design", "--config", cfg) == 0
    rec = ParticleRecipe.load(tmp_path / "out" / "recipe.json")
    np.testing.assert_allclose(rec.N.values, 2 / rec.C0, rtol=1e-14)
    assert rec.C0 == pytest.approx(capacitance_ball(rec.a))
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["M_expected"] == pytest.approx(64)
    assert summary["n_reconstruction_error"] < 1e-12
    assert "expected particles" in capsys.readouterr().out


def test_design_identity_target(tmp_path):
    cfg = write_config(tmp_path, target_n="vacuum")
    assert run("design", "--config", cfg) == 0
    assert json.loads((tmp_path / "out" / "summary.json").read_text())["M_expected"] == 0


def test_design_gain_medium_fails(tmp_path, capsys):
    cfg = write_config(tmp_path, target_n=None, p=[1.0, 0.5])
    data = json.loads(cfg.read_text())
    del data["target_n"]
    cfg.write_text(json.dumps(data))
    assert run("design", "--config", cfg) == 3
    err = capsys.readouterr().err
    assert "offending cells" in err and "(0, 0, 0)" in err


@pytest.mark.parametrize("bad", [
    {"k": -1.0},
    {"schedule": {"M": [27, 8, 64]}},
    {"mode": "sideways"},
    {"domain": {"lo": [0, 0, 0], "hi": [1, 1, 1]}},
])
def test_config_errors(tmp_path, bad):
    cfg = write_config(tmp_path, **bad)
    assert run("design", "--config", cfg) == 2


def test_missing_config(tmp_path):
    assert run("design", "--config", tmp_path / "nope.json") == 2


def test_simulate_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    outs = []
    for i in range(2):
        assert run("simulate", "--config", cfg, "--out", tmp_path / f"o{i}", "--M", 27) == 0
        outs.append({f.name: f.read_bytes() for f in sorted((tmp_path / f"o{i}").glob("*.csv"))})
    assert outs[0] == outs[1]
    assert set(outs[0]) == {"particles_M27.csv", "solution_M27.csv", "far_M27.csv"}
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o2", "--M", 27, "--seed", 99) == 0
    assert (tmp_path / "o2" / "particles_M27.csv").read_bytes() != outs[0]["particles_M27.csv"]


def test_simulate_hard_particles_fail(tmp_path):
    cfg = write_config(tmp_path)
    assert run("design", "--config", cfg) == 0
    rec = json.loads((tmp_path / "out" / "recipe.json").read_text())
    rec["zeta"]["re"] = [0.0] * len(rec["zeta"]["re"])
    rec["zeta"]["im"] = [0.0] * len(rec["zeta"]["im"])
    (tmp_path / "hard.json").write_text(json.dumps(rec))
    cfg2 = write_config(tmp_path, "cfg2.json", recipe_file="hard.json")
    assert run("simulate", "--config", cfg2) == 3


def test_converge_zero_potential(tmp_path):
    cfg = write_config(tmp_path, target_n="vacuum")
    assert run("converge", "--config", cfg) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "report.csv")))
    assert len(rows) == 3
    for r in rows:
        for c in ("field_err_max", "field_err_l2", "far_err_l2", "relative_volume"):
            assert float(r[c]) == 0.0


def test_converge_report(tmp_path):
    cfg = write_config(tmp_path)
    assert run("converge", "--config", cfg) == 0
    out = tmp_path / "out"
    rows = list(csv.DictReader(open(out / "report.csv")))
    assert [int(r["M"]) for r in rows] == sorted(int(r["M"]) for r in rows)
    dom = BoxDomain(CUBE["lo"], CUBE["hi"], CUBE["grid_shape"])
    for r in rows:
        assert all(math.isfinite(float(r[c])) for c in r)
        parts = ParticleSet.from_csv(out / f"particles_M{r['M_target']}.csv", float(r["a"]))
        assert float(r["relative_volume"]) == pytest.approx(relative_volume(parts, dom), rel=1e-15)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_reconstructed"]["max_re"] == pytest.approx(-1.0)
    assert "timings" in summary
    assert "timings" not in (out / "report.csv").read_text()


def test_converge_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    for i in range(2):
        assert run("converge", "--config", cfg, "--out", tmp_path / f"r{i}") == 0
    a = {f.name: f.read_bytes() for f in (tmp_path / "r0").glob("*.csv")}
    b = {f.name: f.read_bytes() for f in (tmp_path / "r1").glob("*.csv")}
    assert a == b


def test_converge_needs_three_entries(tmp_path):
    cfg = write_config(tmp_path, schedule={"M": [8, 27]})
    assert run("converge", "--config", cfg) == 2


def test_continuum_outputs(tmp_path):
    cfg = write_config(tmp_path)
    assert run("continuum", "--config", cfg) == 0
    header = (tmp_path / "out" / "continuum_U.csv").read_text().splitlines()[0]
    assert header == "x,y,z,re,im"
    assert (tmp_path / "out" / "continuum_far.csv").exists()


def test_background_green_mode(tmp_path):
    cfg = write_config(tmp_path, n0=1.2, target_n=1.0, schedule={"M": [4, 8, 16]},
                       domain={**CUBE, "grid_shape": [6, 6, 6]})
    assert run("converge", "--config", cfg, "--out", tmp_path / "c") == 0
    assert run("converge", "--config", cfg, "--out", tmp_path / "g", "--mode", "background-green") == 0
    rc = list(csv.DictReader(open(tmp_path / "c" / "report.csv")))
    rg = list(csv.DictReader(open(tmp_path / "g" / "report.csv")))
    for a, b in zip(rc, rg):
        assert float(a["far_err_l2"]) == pytest.approx(float(b["far_err_l2"]), rel=1e-5, abs=1e-9)


def test_validate_default_passes(tmp_path, capsys):
    from pathlib import Path

    cfg = Path(__file__).resolve().parents[1] / "configs" / "default.json"
    assert run("validate", "--config", cfg, "--out", tmp_path / "v") == 0
    report = json.loads((tmp_path / "v" / "validate.json").read_text())
    assert report["passed"]
    assert "[FAIL]" not in capsys.readouterr().out


def test_validate_corrupted_recipe(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run("design", "--config", cfg) == 0
    rec = json.loads((tmp_path / "out" / "recipe.json").read_text())
    rec["h"]["re"][5] = -1.0  # 1 + h = 0 in a populated cell
    (tmp_path / "bad.json").write_text(json.dumps(rec))
    cfg2 = write_config(tmp_path, "cfg2.json", recipe_file="bad.json")
    assert run("validate", "--config", cfg2, "--out", tmp_path / "v") == 3
    report = json.loads((tmp_path / "v" / "validate.json").read_text())
    failed = [c for c in report["checks"] if not c["ok"]]
    assert [c["name"] for c in failed] == ["recipe_file"]
    assert "(0, 0, 5)" in failed[0]["detail"]["message"]


def test_validate_coarse_grid(tmp_path, capsys):
    cfg = write_config(tmp_path, k=20.0, target_n=0.999)
    assert run("validate", "--config", cfg, "--out", tmp_path / "v") == 3
    report = json.loads((tmp_path / "v" / "validate.json").read_text())
    res = next(c for c in report["checks"] if c["name"] == "resolution")
    assert not res["ok"] and res["detail"]["error"] == "ResolutionError"


def test_capacitance_command(tmp_path, capsys):
    assert run("capacitance", "--levels", 1, 2, "--out", tmp_path) == 0
    rows = list(csv.DictReader(open(tmp_path / "capacitance.csv")))
    assert [int(r["triangles"]) for r in rows] == [80, 320]
    assert float(rows[-1]["relative_error"]) < 0.05


def test_threads_flag(tmp_path):
    cfg = write_config(tmp_path)
    assert run("design", "--config", cfg, "--threads", 1) == 0
