import csv
import json

import numpy as np
import pytest

from nonstat.cli import main
from nonstat.data import read_csv
from nonstat.geometry import Rect
from nonstat.simulate import Scenario


def run(argv, capsys=None):
    rc = main([str(a) for a in argv])
    out = capsys.readouterr() if capsys is not None else None
    return rc, out


@pytest.fixture
def stationary_csv(tmp_path):
    path = tmp_path / "stat.csv"
    assert run(["simulate", "-o", path, "--covariance", "stationary", "--n", 100, "--alpha", 1.0, "--seed", 7])[0] == 0
    return path


def test_simulate_roundtrip_bitwise(stationary_csv):
    data = read_csv(stationary_csv)
    ref = Scenario(n=100, alpha=1.0, seed=7).simulate()
    assert np.array_equal(data.xy, ref.xy)
    assert np.array_equal(data.z, ref.z)


def test_simulate_scenario_json_roundtrip(tmp_path):
    sc_out = tmp_path / "sc.json"
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    assert run(["simulate", "-o", a, "--covariance", "blended", "--n", 60, "--seed", 2, "--scenario-out", sc_out])[0] == 0
    assert json.loads(sc_out.read_text())["schema"] == 1
    assert run(["simulate", "-o", b, "--scenario", sc_out, "--seed", 2])[0] == 0
    assert a.read_bytes() == b.read_bytes()
    with a.open() as fh:
        assert next(csv.reader(fh)) == ["x", "y", "z", "region"]


def test_test_subcommand_deterministic(stationary_csv, tmp_path, capsys):
    args = ["test", stationary_csv, "--M", 9, "--seed", 3, "--quick-fit"]
    rc1, o1 = run(args, capsys)
    rc2, o2 = run(args, capsys)
    assert rc1 == rc2 == 0
    r1, r2 = json.loads(o1.out), json.loads(o2.out)
    assert r1["p_value"] == r2["p_value"] and r1["null"] == r2["null"]
    assert round(r1["p_value"] * 10, 9) == round(r1["p_value"] * 10)


def test_segment_blended_picks_two(tmp_path, capsys):
    path = tmp_path / "blend.csv"
    part = tmp_path / "part.csv"
    assert run(["simulate", "-o", path, "--covariance", "blended", "--alpha2", 0.5, "--n", 500, "--seed", 3])[0] == 0
    rc, out = run(["segment", path, "--domain", 0, 1, 0, 1, "--kmax", 4, "--partition", part], capsys)
    assert rc == 0
    rep = json.loads(out.out)
    assert rep["K_star"] == 2
    bic = {int(k): v for k, v in rep["bic"].items()}
    assert min(bic, key=bic.get) == 2
    with part.open() as fh:
        rows = list(csv.DictReader(fh))
    assert {r["subregion_label"] for r in rows} <= {"0", "1"}


def test_indices_and_visualize(stationary_csv, tmp_path):
    idx = tmp_path / "xi.csv"
    assert run(["indices", stationary_csv, "-o", idx, "--tau2", 0.5])[0] == 0
    with idx.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) > 50 and "xi" in rows[0]
    out = tmp_path / "vis"
    assert run(["visualize", stationary_csv, "--tau2", 0.5, "--grid", 3, "--outdir", out])[0] == 0
    assert (out / "cells.json").exists() and (out / "path.json").exists()
    assert len(list(out.glob("fusion_*.csv"))) == 3


def test_krige_grid(stationary_csv, tmp_path):
    out = tmp_path / "pred.csv"
    model = tmp_path / "model.json"
    assert run(["krige", "--train", stationary_csv, "--grid", 4, 3, "--tau2", 0.0, "-o", out, "--model-out", model])[0] == 0
    with out.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12 and set(rows[0]) == {"x", "y", "mean", "sd", "region"}
    again = tmp_path / "pred2.csv"
    assert run(["krige", "--train", stationary_csv, "--grid", 4, 3, "--model", model, "-o", again])[0] == 0
    a = np.loadtxt(out, delimiter=",", skiprows=1)
    b = np.loadtxt(again, delimiter=",", skiprows=1)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_bench_small(tmp_path):
    cells = tmp_path / "cells.json"
    cells.write_text(json.dumps([{"name": "b", "task": "segment", "K": 2,
                                  "scenario": {"covariance": "blended", "n": 150}}]))
    out = tmp_path / "bench"
    assert run(["bench", "--cells", cells, "--R", 2, "--outdir", out])[0] == 0
    for name in ("table.csv", "table.md", "raw.json"):
        assert (out / name).exists()


def test_exit_codes(stationary_csv, tmp_path, capsys):
    assert run(["test", stationary_csv, "--M", 0], capsys)[0] == 2
    assert run(["test", stationary_csv, "--bogus"], capsys)[0] == 2
    assert run(["test", tmp_path / "missing.csv"], capsys)[0] == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y,z\n0.1,0.2,1.0\n0.3,oops,2.0\n")
    rc, out = run(["indices", bad, "-o", tmp_path / "o.csv"], capsys)
    assert rc == 3 and "line" in out.err and "3" in out.err
    assert run(["fetch-colorado", "--cache-dir", tmp_path / "empty", "--offline"], capsys)[0] == 3
    # sites outside the declared domain are a data problem
    assert run(["indices", stationary_csv, "-o", tmp_path / "o.csv", "--domain", 0, 0.1, 0, 0.1], capsys)[0] == 3
    assert run(["simulate", "-o", tmp_path / "s.csv", "--n", 0], capsys)[0] == 2


def test_config_precedence(stationary_csv, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schema": 1, "seed": 5, "test": {"M": 4, "level": 0.1, "quick_fit": True}}))
    rc, out = run(["test", stationary_csv, "--config", cfg, "--M", 9], capsys)
    assert rc == 0
    rep = json.loads(out.out)
    assert rep["M"] == 9  # CLI beats config
    assert rep["level"] == 0.1  # config beats default
    assert rep["seed"] == 5
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": 1, "test": {"nope": 1}}))
    assert run(["test", stationary_csv, "--config", bad], capsys)[0] == 2
    old = tmp_path / "old.json"
    old.write_text(json.dumps({"schema": 2}))
    assert run(["test", stationary_csv, "--config", old], capsys)[0] == 2


def test_domain_override(stationary_csv):
    data = read_csv(stationary_csv, domain=Rect(-2.5, 2.5, -2.5, 2.5))
    assert data.domain.area == pytest.approx(25.0)
