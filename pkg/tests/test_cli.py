import json
import subprocess
import sys
from pathlib import Path

import pytest

from qcdlab.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_analyze_shipped_config(tmp_path, capsys):
    assert main(["analyze", "--config", str(CONFIGS / "two_symbol.json"), "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == str(tmp_path)
    s = json.loads((tmp_path / "summary.json").read_text())
    assert {"theta0", "theta_plus", "m0", "m1", "gamma2", "rho_a"} <= set(s)
    assert (tmp_path / "eagerness.png").exists()


@pytest.mark.parametrize("name", ["gaussian.json", "markov.json", "pomdp.json", "pomdp_hidden.json"])
def test_shipped_configs_analyze_or_report(tmp_path, name):
    cmd = "pomdp" if name.startswith("pomdp") else "analyze"
    assert main([cmd, "--config", str(CONFIGS / name), "--out", str(tmp_path), "--no-plots"]) == 0
    assert (tmp_path / "manifest.json").exists()


def test_seed_and_reps_override(tmp_path):
    args = ["simulate", "--config", str(CONFIGS / "two_symbol.json"), "--no-plots", "--seed", "5", "--reps", "500"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["base_seed"] == 5 and man["reps"] == 500


def test_schema_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"change_time": {"variant": "geometric", "rho": 0.1}}))
    assert main(["analyze", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "model" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(["analyze", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "qcdlab", "path", "--config", str(CONFIGS / "gaussian.json"), "--out", str(tmp_path)],
        capture_output=True,
        text=True,
        check=False,
    )
    assert res.returncode == 0, res.stderr
    rows = (tmp_path / "path.csv").read_text().splitlines()
    assert rows[0] == "t,x" and len(rows) >= 4
    assert (tmp_path / "path.png").exists()


def test_png_output_is_reproducible(tmp_path):
    for d in ("a", "b"):
        assert main(["path", "--config", str(CONFIGS / "gaussian.json"), "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "path.png").read_bytes() == (tmp_path / "b" / "path.png").read_bytes()
