"""cli のテスト (サブコマンド・終了コード・出力ファイル)"""

import csv
import json

import pytest
from openpyxl import load_workbook

import cli

SMALL = {
    "name": "small",
    "scenario": {
        "layout": {"kind": "IndoorFactory", "hall_length": 60.0, "hall_width": 30.0, "clutter_density": 0.1},
        "n_anchors": 4,
    },
    "method": "Tdoa",
    "radio": {"bandwidth_hz": 100e6},
    "channel": "highway-like",
    "n_trials": 8,
    "master_seed": 11,
    "psl_levels": ["V2X-R18", "PSL1"],
}


@pytest.fixture(autouse=True)
def _env(monkeypatch):
    monkeypatch.delenv("SLPOS_WORKERS", raising=False)
    monkeypatch.setenv("SLPOS_LOG_LEVEL", "WARNING")


@pytest.fixture
def config_file(tmp_path):
    def _write(doc=None):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(SMALL if doc is None else doc), encoding="utf-8")
        return path
    return _write


def rows_of(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


class TestRun:
    def test_writes_results_and_summary(self, tmp_path, config_file):
        out = tmp_path / "out"
        code = cli.main(["run", "--config", str(config_file()), "--out", str(out), "--no-progress"])
        assert code == 0
        rows = rows_of(out / "results.csv")
        assert len(rows) == 8
        assert {r["label"] for r in rows} == {"small"}
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert summary["n_trials"] == 8
        assert [p["name"] for p in summary["configs"][0]["psl"]] == ["V2X-R18", "PSL1"]
        assert not (out / "measurements.csv").exists()

    def test_excel_and_measurements(self, tmp_path, config_file):
        out = tmp_path / "out"
        code = cli.main(["run", "--config", str(config_file()), "--out", str(out), "--no-progress",
                         "--excel", "--dump-measurements"])
        assert code == 0
        assert len(rows_of(out / "measurements.csv")) == 8 * 4
        wb = load_workbook(out / "summary.xlsx")
        assert wb.sheetnames == ["summary", "psl"]
        assert wb["summary"].cell(row=3, column=1).value == "small"

    def test_same_seed_same_bytes(self, tmp_path, config_file):
        path = config_file()
        cli.main(["run", "--config", str(path), "--out", str(tmp_path / "a"), "--no-progress", "--workers", "1"])
        cli.main(["run", "--config", str(path), "--out", str(tmp_path / "b"), "--no-progress", "--workers", "3"])
        assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()

    def test_prints_psl_verdicts(self, tmp_path, config_file, capsys):
        cli.main(["run", "--config", str(config_file()), "--out", str(tmp_path / "o"), "--no-progress"])
        out = capsys.readouterr().out
        assert "V2X-R18" in out and ("PASS" in out or "FAIL" in out)

    def test_failed_run_removes_outputs(self, tmp_path, config_file, monkeypatch):
        def broken(path, doc):
            raise OSError("disk full")

        monkeypatch.setattr(cli, "write_summary_json", broken)
        out = tmp_path / "out"
        code = cli.main(["run", "--config", str(config_file()), "--out", str(out), "--no-progress"])
        assert code == 1
        assert not (out / "results.csv").exists()


class TestSweep:
    def test_sweep_rows(self, tmp_path, config_file):
        doc = {**SMALL, "n_trials": 4, "common_random_numbers": True,
               "sweep": {"axis": "bandwidth_hz", "values": [20e6, 100e6]}}
        out = tmp_path / "out"
        assert cli.main(["sweep", "--config", str(config_file(doc)), "--out", str(out), "--no-progress"]) == 0
        labels = [r["label"] for r in rows_of(out / "results.csv")]
        assert labels == ["bandwidth_hz=2e+07"] * 4 + ["bandwidth_hz=1e+08"] * 4
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert [c["value"] for c in summary["configs"]] == [20e6, 100e6]

    def test_sweep_needs_section(self, tmp_path, config_file):
        assert cli.main(["sweep", "--config", str(config_file()), "--out", str(tmp_path / "o")]) == 2

    def test_sweep_override(self, tmp_path, config_file):
        doc = {**SMALL, "n_trials": 2, "sweep": {"axis": "bandwidth_hz", "values": [20e6]}}
        out = tmp_path / "out"
        code = cli.main(["sweep", "--config", str(config_file(doc)), "--out", str(out), "--no-progress",
                         "--set", "sweep.values=[40e6]"])
        assert code == 0
        assert {r["bandwidth_hz"] for r in rows_of(out / "results.csv")} == {"40000000.0"}


class TestUsageErrors:
    def test_unknown_key_exit_2(self, tmp_path, config_file, capsys):
        code = cli.main(["run", "--config", str(config_file()), "--out", str(tmp_path / "o"),
                         "--set", "radio.bandwith_hz=40e6"])
        assert code == 2
        assert "radio.bandwith_hz" in capsys.readouterr().err

    def test_unknown_subcommand(self):
        assert cli.main(["frobnicate"]) == 2

    def test_zero_workers(self, tmp_path, config_file):
        assert cli.main(["run", "--config", str(config_file()), "--workers", "0"]) == 2

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["run", "--config", str(tmp_path / "none.json")]) == 2

    def test_set_without_config(self, tmp_path):
        code = cli.main(["protocol-trace", "--out", str(tmp_path), "--set", "method=Tdoa"])
        assert code == 2

    def test_too_few_anchors(self, tmp_path, config_file):
        doc = {**SMALL, "scenario": {**SMALL["scenario"], "n_anchors": 2}}
        assert cli.main(["run", "--config", str(config_file(doc)), "--out", str(tmp_path / "o")]) == 2

    def test_angle_method_without_array(self, tmp_path, config_file):
        doc = {**SMALL, "method": "AoaTriang"}
        assert cli.main(["run", "--config", str(config_file(doc)), "--out", str(tmp_path / "o")]) == 2

    def test_unknown_psl_level(self, tmp_path, config_file):
        doc = {**SMALL, "psl_levels": ["PSL42"]}
        assert cli.main(["run", "--config", str(config_file(doc)), "--out", str(tmp_path / "o")]) == 2


class TestPslCheck:
    def test_reads_results(self, tmp_path, config_file, capsys):
        out = tmp_path / "out"
        cli.main(["run", "--config", str(config_file()), "--out", str(out), "--no-progress"])
        capsys.readouterr()
        code = cli.main(["psl-check", "--results", str(out / "results.csv"), "--levels", "V2X-R18"])
        assert code == 0
        lines = [line for line in capsys.readouterr().out.splitlines() if "V2X-R18" in line]
        assert len(lines) == 1 and lines[0].startswith("[small]")

    def test_missing_results(self, tmp_path):
        assert cli.main(["psl-check", "--results", str(tmp_path / "none.csv")]) == 2

    def test_bad_results_columns(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("trial\n0\n", encoding="utf-8")
        assert cli.main(["psl-check", "--results", str(path)]) == 2

    def test_bad_results_value(self, tmp_path, capsys):
        path = tmp_path / "r.csv"
        path.write_text(
            "trial,method,bandwidth_hz,n_anchors,h_err_m,v_err_m,latency_s,converged,label\n"
            "0,Tdoa,100000000.0,4,1.2,nan,0.01,1,a\n"
            "1,Tdoa,100000000.0,4,oops,nan,0.01,1,a\n",
            encoding="utf-8",
        )
        assert cli.main(["psl-check", "--results", str(path)]) == 2

    def test_2d_results_leave_vertical_unevaluated(self, tmp_path, config_file, capsys):
        out = tmp_path / "out"
        cli.main(["run", "--config", str(config_file()), "--out", str(out), "--no-progress"])
        capsys.readouterr()
        assert cli.main(["psl-check", "--results", str(out / "results.csv"), "--levels", "PSL1"]) == 0
        line = next(line for line in capsys.readouterr().out.splitlines() if "PSL1" in line)
        assert "未評価" in line


class TestProtocolTrace:
    def test_mo_lr_starts_at_gmlc(self, tmp_path, capsys):
        code = cli.main(["protocol-trace", "--session", "NslMoLr", "--method", "Tdoa", "--anchors", "3",
                         "--out", str(tmp_path)])
        assert code == 0
        first = json.loads(capsys.readouterr().out.splitlines()[0])
        assert first["to"] == "Gmlc"
        saved = (tmp_path / "trace.jsonl").read_text(encoding="utf-8").splitlines()
        assert json.loads(saved[0]) == first

    def test_defaults_from_config(self, tmp_path, config_file, capsys):
        code = cli.main(["protocol-trace", "--config", str(config_file()), "--out", str(tmp_path)])
        assert code == 0
        kinds = {json.loads(line)["to"] for line in capsys.readouterr().out.splitlines()}
        assert "Gmlc" not in kinds and "Lmf" not in kinds

    def test_unknown_session(self, tmp_path):
        assert cli.main(["protocol-trace", "--session", "Pigeon", "--out", str(tmp_path)]) == 2
