import csv
import json
import shutil
import subprocess
import sys

import pytest
import yaml

from codim1lab import __version__
from codim1lab.cli import main

BASE = {
    "geometry": {"kind": "sphere", "radius": 1.0},
    "grids": {"n_u": 16, "n_s": 16},
    "epsilons": [0.5, 0.25, 0.1],
    "modes": {"m_max": 1.5},
    "t_grid": 3,
    "k": 4,
    "seed": 0,
    "trials": 5,
}


def write_cfg(tmp_path, name="run.yaml", **changes):
    cfg = {**BASE, **changes}
    cfg.setdefault("output", {"directory": str(tmp_path / "out")})
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_index_row(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["index", "--config", str(cfg)]) == 0
    rows = read_csv(tmp_path / "out" / "index.csv")
    t_rows = {float(r["epsilon"]): r for r in rows if r["operator"] == "T"}
    r = t_rows[0.5]
    assert (r["index"], r["ker_plus"], r["ker_minus"], r["indeterminate"]) == ("1", "1", "0", "false")
    h_rows = [r for r in rows if r["operator"] == "H"]
    assert len(h_rows) == 3 and all(r["index"] == "0" for r in h_rows)
    assert list(rows[0]) == ["operator", "epsilon", "index", "ker_plus", "ker_minus", "gap_ratio", "indeterminate"]


def test_expansion(tmp_path):
    cfg = write_cfg(tmp_path, epsilons=[0.2, 0.1, 0.05, 0.025], grids={"n_u": 24, "n_s": 24})
    assert main(["expansion", "--config", str(cfg)]) == 0
    rows = read_csv(tmp_path / "out" / "expansion.csv")
    assert list(rows[0]) == ["param_name", "param_value", "error"]
    err = [float(r["error"]) for r in rows]
    assert all(a > b for a, b in zip(err, err[1:]))
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["summary"]["fitted_order"] >= 0.9
    assert summary["version"] == __version__
    assert summary["config"]["epsilons"] == [0.2, 0.1, 0.05, 0.025]
    assert summary["flags"] == []


def test_spectrum_schema_and_precision(tmp_path):
    cfg = write_cfg(tmp_path, epsilons=[0.3])
    assert main(["spectrum", "--config", str(cfg)]) == 0
    text = (tmp_path / "out" / "spectrum.csv").read_text()
    assert text.splitlines()[0] == "mode,k,eigenvalue,residual,epsilon,t"
    doc = json.loads((tmp_path / "out" / "summary.json").read_text())
    first = doc["records"][0]
    row = read_csv(tmp_path / "out" / "spectrum.csv")[0]
    assert float(row["eigenvalue"]) == first["eigenvalue"]      # 17 digits round-trip


def test_empty_epsilons(tmp_path, capsys):
    cfg = write_cfg(tmp_path, epsilons=[])
    assert main(["index", "--config", str(cfg)]) == 1
    err = capsys.readouterr().err.strip()
    assert err == "config: epsilons must be non-empty"


def test_focal_violation(tmp_path, capsys):
    cfg = write_cfg(tmp_path, epsilons=[0.5, 0.95])
    assert main(["index", "--config", str(cfg)]) == 1
    err = capsys.readouterr().err
    assert "0.95" in err and len(err.strip().splitlines()) == 1


def test_unreadable_config(tmp_path, capsys):
    assert main(["index", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert capsys.readouterr().err.startswith("config: ")


def test_bad_yaml(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("geometry: [unclosed\n")
    assert main(["index", "--config", str(p)]) == 1
    assert len(capsys.readouterr().err.strip().splitlines()) == 1


@pytest.mark.parametrize("change", [
    {"grids": {"n_u": 15, "n_s": 16}},
    {"grids": {"n_u": -2, "n_s": 16}},
    {"k": 0},
    {"geometry": {"kind": "torus", "major_radius": 1.0, "minor_radius": 2.0}},
    {"output": {"directory": "x", "formats": ["xml"]}},
    {"modes": {"m_max": 1.5, "sweep": [1]}},
])
def test_invalid_config(tmp_path, change, capsys):
    cfg = write_cfg(tmp_path, **change)
    assert main(["validate", "--config", str(cfg)]) == 1
    assert capsys.readouterr().err.startswith("config: ")


def test_flagged_exit(tmp_path, capsys):
    cfg = write_cfg(tmp_path, tolerances={"gap_ratio": 1e300})
    assert main(["index", "--config", str(cfg)]) == 2
    assert "indeterminate" in capsys.readouterr().err
    doc = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert doc["flags"]


def test_overrides_and_format(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "o2"
    rc = main(["index", "--config", str(cfg), "--epsilons", "0.3,0.2", "--n-s", "32",
               "--m-max", "0.5", "--out", str(out), "--format", "csv"])
    assert rc == 0
    rows = read_csv(out / "index.csv")
    assert sorted({float(r["epsilon"]) for r in rows}) == [0.2, 0.3]
    assert not (out / "summary.json").exists()


def test_dump_matrices(tmp_path):
    cfg = write_cfg(tmp_path, epsilons=[0.3], modes={"m_max": 0.5}, grids={"n_u": 8, "n_s": 4})
    assert main(["spectrum", "--config", str(cfg), "--dump-matrices"]) == 0
    dumps = sorted((tmp_path / "out" / "matrices").iterdir())
    assert len(dumps) == 2
    line = dumps[0].read_text().splitlines()[0].split()
    assert len(line) == 4 and int(line[0]) >= 0
    float(line[2]), float(line[3])


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write_cfg(tmp_path, output={"directory": str(blocker / "sub")})
    assert main(["validate", "--config", str(cfg)]) == 1


@pytest.mark.parametrize("sub", ["spectrum", "index", "expansion", "curvature", "homotopy", "probe", "validate"])
def test_deterministic(tmp_path, sub):
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        cfg = write_cfg(tmp_path, name=f"c{i}.yaml", output={"directory": str(out)})
        assert main([sub, "--config", str(cfg)]) in (0, 2)
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.is_file()})
    # config echo differs only by output directory; compare CSV byte-for-byte
    assert outs[0][f"{sub}.csv"] == outs[1][f"{sub}.csv"]
    j0 = json.loads(outs[0]["summary.json"])
    j1 = json.loads(outs[1]["summary.json"])
    j0["config"].pop("output"), j1["config"].pop("output")
    assert j0 == j1


def test_same_config_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    assert main(["probe", "--config", str(cfg)]) == 0
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    shutil.rmtree(out)
    assert main(["probe", "--config", str(cfg)]) == 0
    assert first == {p.name: p.read_bytes() for p in out.iterdir()}


def test_console_script(tmp_path):
    exe = shutil.which("codim1lab")
    cmd = [exe] if exe else [sys.executable, "-m", "codim1lab.cli"]
    cfg = write_cfg(tmp_path, epsilons=[])
    proc = subprocess.run(cmd + ["validate", "--config", str(cfg)], capture_output=True, text=True)
    assert proc.returncode == 1
    assert proc.stderr.strip() == "config: epsilons must be non-empty"
