import csv
import json
import subprocess
import sys

import pytest

from coarsespace.cli import ExperimentManifest, main


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_classify(tmp_path, capsys):
    out = tmp_path / "cls"
    assert main(["classify", "--c", "10", "--omega", "0.5", "--out", str(out)]) == 0
    report = json.loads((out / "classify.json").read_text())
    assert report[0]["case"] == "D"
    chk = report[0]["epsilon_star"][0]
    assert abs(chk["rho_T"] - chk["predicted_rho"]) < 1e-8
    assert "case D" in capsys.readouterr().out
    man = json.loads((out / "manifest.json").read_text())
    assert man["experiment"] == "classify" and man["panels"] == [[10.0, 0.5]]


def test_figure1_outputs(tmp_path):
    out = tmp_path / "fig"
    assert main(["figure1", "--eps-points", "21", "--out", str(out)]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert "manifest.json" in files
    assert "figure1_c0_omega1.csv" in files and "figure1_c10_omega0.5.json" in files
    rows = read_csv(out / "figure1_c0_omega0.5.csv")
    assert rows[0] == ["epsilon", "abs_lambda_closed", "rho_T_numeric", "case_label"]
    assert len(rows) == 22 and rows[1][0] == "-3.0" and rows[11][0] == "0.0"
    assert {r[3] for r in rows[1:]} == {"B"}


def test_table1_small(tmp_path):
    out = tmp_path / "tab"
    rc = main(["table1", "--h", "1/6", "--m", "1", "2", "--iters", "5", "--out", str(out)])
    assert rc == 0
    rows = read_csv(out / "table1.csv")
    assert rows[0] == ["c", "omega", "m", "coarse_kind", "rho", "energy_norm", "kappa2"]
    assert len(rows) == 1 + 4 * 2 * 2
    by = {(r[0], r[1], r[2], r[3]): r for r in rows[1:]}
    assert by[("10", "0.5", "1", "spectral")][5:] == ["", ""]
    assert by[("0", "1", "2", "optimized")][6] != ""
    records = json.loads((out / "table1.json").read_text())
    assert all("kappa2_tied_range" in r for r in records if r["coarse_kind"] == "spectral" and r["omega"] == 1)


def test_optimize_outputs(tmp_path):
    out = tmp_path / "opt"
    assert main(["optimize", "--h", "1/6", "--m", "2", "--iters", "10", "--out", str(out)]) == 0
    assert read_csv(out / "trace_c0_omega1_m2.csv")[0] == ["step", "objective", "grad_norm", "rho_probe"]
    rep = json.loads((out / "report_c0_omega1_m2.json").read_text())
    assert rep["optimized"]["provenance"]["coarse_kind"] == "optimized"
    assert (out / "P_c0_omega1_m2.coo").read_text().startswith("% 25 2\n")


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "man.json"
    cfg.write_text(json.dumps({"h": "1/6", "panels": [[0.0, 0.5]], "eps_points": 5}))
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg), "--eps-points", "7", "--out", str(out)]) == 0
    man = ExperimentManifest(**json.loads((out / "manifest.json").read_text()))
    assert man.eps_points == 7 and man.h == "1/6"
    assert len(read_csv(out / "sweep_c0_omega0.5.csv")) == 8


@pytest.mark.parametrize("argv", [
    ["classify", "--omega", "2"],
    ["classify", "--h", "0.3"],
    ["classify", "--c", "-1"],
    ["classify", "--c", "30", "--h", "1/10"],
    ["figure1", "--eps-min", "1", "--eps-max", "0"],
    ["optimize", "--m", "0", "--iters", "1"],
])
def test_precondition_exit_code(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path / "x")]) == 2


def test_numerical_exit_code(tmp_path):
    # c = 2/h makes A defective
    assert main(["classify", "--h", "1/5", "--c", "10", "--out", str(tmp_path / "x")]) == 3


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "coarsespace.cli", "classify", "--omega", "2",
                        "--out", str(tmp_path / "x")], capture_output=True, text=True)
    assert r.returncode == 2 and "precondition" in r.stderr
