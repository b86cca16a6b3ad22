import csv
import subprocess
import sys

import numpy as np

from pmse_mimo import cli, harness
from pmse_mimo.errors import NumericError
from pmse_mimo.model import SystemConfig


def test_simulate_writes_csvs(tmp_path, capsys):
    out = tmp_path / "f2.csv"
    code = cli.main(["simulate", "--figure", "fig2", "--trials", "2", "--seed", "4",
                     "--snr-list", "0,10", "--out", str(out), "--no-timing"])
    assert code == 0
    table = list(csv.DictReader(out.open()))
    assert {r["method"] for r in table} == {"pmse", "dpc_bound", "zf", "bd"}
    assert {r["snr_db"] for r in table} == {"0.0", "10.0"}
    summary = list(csv.DictReader((tmp_path / "f2_summary.csv").open()))
    infeasible = {(r["n_rx"], r["method"]) for r in summary if r["status"] == "infeasible"}
    assert infeasible == {("4,4", "zf"), ("4,4", "bd")}
    assert "infeasible" in capsys.readouterr().err


def test_simulate_with_symbols(tmp_path):
    out = tmp_path / "f4.csv"
    assert cli.main(["simulate", "--figure", "fig4", "--trials", "1", "--snr-list", "15",
                     "--symbols", "100", "--out", str(out)]) == 0
    summary = list(csv.DictReader((tmp_path / "f4_summary.csv").open()))
    assert all(r["ber_user1"] != "" for r in summary)


def test_simulate_sweep_error_exit_code(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise NumericError("injected")
    monkeypatch.setattr(harness.pmse, "solve", broken)
    code = cli.main(["simulate", "--figure", "fig3", "--trials", "2", "--snr-list", "10",
                     "--symbols", "10", "--out", str(tmp_path / "x.csv")])
    assert code != 0


def test_design(tmp_path, capsys):
    cfg = SystemConfig.symmetric(2, 4, 2, 2)
    H = harness.generate_channel(cfg, 1).H
    harness.write_complex_csv(tmp_path / "H.csv", H)
    (tmp_path / "sys.conf").write_text("n_users = 2\nn_tx = 4\nn_rx = 2\nn_streams = 2\n"
                                       "noise_power = 0.1\n")
    code = cli.main(["design", "--config", str(tmp_path / "sys.conf"),
                     "--channel", str(tmp_path / "H.csv"), "--out", str(tmp_path / "d")])
    assert code == 0
    U = harness.read_complex_csv(tmp_path / "d" / "U.csv")
    assert U.shape == (4, 4)
    np.testing.assert_allclose(np.linalg.norm(U, axis=0), 1, atol=1e-12)
    V1 = harness.read_complex_csv(tmp_path / "d" / "V_1.csv")
    assert V1.shape == (2, 2)
    powers = list(csv.DictReader((tmp_path / "d" / "powers.csv").open()))
    assert len(powers) == 4
    assert sum(float(r["p"]) for r in powers) <= 1 + 1e-10
    assert "sum rate" in capsys.readouterr().out


def test_design_rejects_bad_channel(tmp_path):
    (tmp_path / "H.csv").write_text("1,0,2\n")
    (tmp_path / "sys.conf").write_text("n_users = 1\nn_tx = 1\nn_rx = 1\nn_streams = 1\n")
    assert cli.main(["design", "--config", str(tmp_path / "sys.conf"),
                     "--channel", str(tmp_path / "H.csv")]) != 0


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "pmse_mimo.cli", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "simulate" in res.stdout and "design" in res.stdout
