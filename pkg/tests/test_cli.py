import json
import subprocess
import sys

import numpy as np
import pytest

from foldylax.cli import ConfigError, config_from_dict, fit_loglog, main
from foldylax.farfield import read_pattern_csv

PEC = {
    "cluster": {"centers": [[0, 0, 0]], "radius_a": 0.2},
    "material": {"kind": "pec"},
    "variant": "pec",
    "wave": {"k": 1.0, "direction": [0, 0, 1], "polarization": [1, 0, 0]},
    "tensors": {"method": "analytic"},
}
GRID = {
    "cluster": {"grid": {"spacing": 0.5, "counts": [3, 3, 3], "radius_a": 0.05}},
    "material": {"kind": "penetrable", "eps_r": 3.0, "mu_r": 2.0},
    "wave": {"k": 1.5, "direction": [0, 0, 1], "polarization": [1, 0, 0]},
}
RANDOM = dict(GRID, cluster={"random": {"n": 6, "radius_a": 0.05, "box": 1.0, "min_gap": 0.2}})


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_scatter_pec_single(tmp_path):
    out = tmp_path / "out"
    assert main(["--config", write(tmp_path, PEC), "--out", str(out)]) == 0
    lines = (out / "pattern.csv").read_text().splitlines()
    assert len(lines) == 1 + 16 * 32
    rep = json.loads((out / "report.json").read_text())
    assert rep["cluster"]["c_r"] == "inf"
    assert rep["pattern"]["transversality_error"] < 1e-10
    sol = json.loads((out / "solution.json").read_text())
    assert len(sol["particles"]) == 1 and set(sol["particles"][0]) == {"R", "Q"}


def test_zero_polarization_gives_zero_pattern(tmp_path):
    cfg = dict(GRID, wave=dict(GRID["wave"], polarization=[0, 0, 0]))
    out = tmp_path / "out"
    assert main(["--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    assert np.abs(read_pattern_csv(out / "pattern.csv").values).max() == 0


def test_same_seed_reproducible(tmp_path):
    cfg = write(tmp_path, RANDOM)
    reports = []
    for name in ("a", "b", "c"):
        seed = "7" if name != "c" else "8"
        assert main(["--config", cfg, "--out", str(tmp_path / name), "--seed", seed]) == 0
        rep = json.loads((tmp_path / name / "report.json").read_text())
        rep.pop("timing")
        reports.append(json.dumps(rep, sort_keys=True))
        assert rep["seed"] == int(seed)
    assert reports[0] == reports[1]
    assert reports[0] != reports[2]
    assert (tmp_path / "a" / "pattern.csv").read_bytes() == (tmp_path / "b" / "pattern.csv").read_bytes()


def test_seed_must_be_u64(tmp_path):
    with pytest.raises(SystemExit):
        main(["--config", write(tmp_path, RANDOM), "--seed", "-1"])
    with pytest.raises(ConfigError):
        config_from_dict(dict(RANDOM, seed=2**64))


@pytest.mark.parametrize("bad", [
    {"study": {"parameter": "a", "values": [0.02]}},
    {"study": {"parameter": "a", "values": [0.04, 0.01, 0.02]}},
    {"study": {"parameter": "k", "values": [1, 2, 3]}},
    {"variant": "pec"},
    {"variant": "nope"},
    {"cluster": {"file": "missing.json"}},
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        config_from_dict(dict(GRID, **bad))


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = dict(GRID, study={"parameter": "a", "values": [0.02]})
    code = main(["--config", write(tmp_path, cfg), "--verb", "study", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "config" in capsys.readouterr().err


def test_failure_names_stage(tmp_path, capsys):
    cfg = dict(GRID, cluster={"grid": {"spacing": 0.05, "counts": [2, 1, 1], "radius_a": 0.1}})
    assert main(["--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    assert "geometry" in capsys.readouterr().err


def test_check_verb(tmp_path):
    out = tmp_path / "o"
    assert main(["--config", write(tmp_path, GRID), "--verb", "check", "--out", str(out)]) == 0
    rep = json.loads((out / "check.json").read_text())
    assert rep["passed"]
    assert set(rep["checks"]) == {"linearity", "transversality", "translation_covariance",
                                  "assembled_residual", "norm_bound"}


def test_tensors_verb(tmp_path):
    out = tmp_path / "o"
    assert main(["--config", write(tmp_path, GRID), "--verb", "tensors", "--out", str(out)]) == 0
    data = json.loads((out / "tensors.json").read_text())
    assert data["kind"] == "penetrable"


def test_study_verb(tmp_path):
    cfg = dict(GRID, wave=dict(GRID["wave"], k=1.0),
               study={"parameter": "a", "values": [0.04, 0.02, 0.01], "c_r": 10})
    out = tmp_path / "o"
    assert main(["--config", write(tmp_path, cfg), "--verb", "study", "--out", str(out)]) == 0
    rep = json.loads((out / "study.json").read_text())
    assert len(rep["points"]) == 3 and rep["strictly_decreasing"]
    assert rep["decay_order"] > 1.5
    assert "decay order" in (out / "summary.txt").read_text()


def test_fit_loglog_exact():
    x = np.array([1.0, 2.0, 4.0])
    assert fit_loglog(x, 3 * x**2.5) == pytest.approx(2.5, rel=1e-12)


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "foldylax", "--config", write(tmp_path, PEC),
                        "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "o" / "report.json").exists()
