import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from nlazf.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_NUMERIC,
    EXIT_OK,
    SWEEP_COLUMNS,
    CLIError,
    main,
    parse_config,
)
from nlazf.simulation import SimConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
FAST = ["--realizations", "4", "--set", "sweep.snr_db={start: 0, stop: 50, step: 5}"]


def write_yaml(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestParseConfig:
    def test_flag_beats_file(self, tmp_path):
        cfg_path = write_yaml(tmp_path / "c.yaml", {"system": {"M": 8}})
        assert parse_config(cfg_path).M == 8
        assert parse_config(cfg_path, {"system.M": 2}).M == 2

    def test_odd_m(self, tmp_path):
        cfg_path = write_yaml(tmp_path / "c.yaml", {"system": {"M": 3}})
        with pytest.raises(CLIError, match="M must be even") as info:
            parse_config(cfg_path)
        assert info.value.code == EXIT_CONFIG

    def test_missing_file(self, tmp_path):
        with pytest.raises(CLIError) as info:
            parse_config(tmp_path / "absent.yaml")
        assert info.value.code == EXIT_CONFIG

    def test_unknown_key_names_path(self, tmp_path):
        cfg_path = write_yaml(tmp_path / "c.yaml", {"solver": {"tolerance": 1e-3}})
        with pytest.raises(CLIError, match="solver.tolerance"):
            parse_config(cfg_path)

    def test_defaults_without_file(self):
        assert parse_config(None) == SimConfig()

    def test_shipped_configs_parse(self):
        assert parse_config(CONFIGS / "fig1_m2.yaml").M == 2
        cfg = parse_config(CONFIGS / "fig1_m8.yaml")
        assert cfg.M == 8 and len(cfg.snr_grid_db) == 11


class TestSweepCommand:
    def test_cardinality_and_columns(self, tmp_path, capsys):
        assert main(["sweep", "--out", str(tmp_path), *FAST]) == EXIT_OK
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert len(lines) == 45
        assert lines[0].split(",")[: len(SWEEP_COLUMNS)] == SWEEP_COLUMNS
        assert len(read_rows(tmp_path / "table.csv")) == 4

    def test_default_seed_in_manifest(self, tmp_path, capsys):
        main(["sweep", "--out", str(tmp_path), *FAST])
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["config"]["seed"] == SimConfig().seed
        assert manifest["config"]["n_realizations"] == 4

    def test_manifest_round_trip(self, tmp_path, capsys):
        cfg_path = write_yaml(tmp_path / "c.yaml", {"seed": 5, "pa": {"a3": [-0.05, 0.01]}, "solver": {"eps": 1e-6}})
        main(["sweep", "--config", str(cfg_path), "--out", str(tmp_path), *FAST])
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        resolved = parse_config(cfg_path, {"sweep.n_realizations": 4, "sweep.snr_db": {"start": 0, "stop": 50, "step": 5}})
        assert SimConfig.from_dict(manifest["config"]) == resolved

    def test_byte_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["sweep", "--out", str(a), "--seed", "3", *FAST])
        main(["sweep", "--out", str(b), "--seed", "3", "--threads", "3", *FAST])
        assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
        assert (a / "table.csv").read_bytes() == (b / "table.csv").read_bytes()

    def test_csv_round_trip(self, tmp_path, capsys):
        from nlazf.cli import sweep_csv
        from nlazf.simulation import run_sweep

        cfg = SimConfig(n_realizations=3, snr_grid_db=(0.0, 30.0))
        res = run_sweep(cfg)
        rows = list(csv.DictReader(sweep_csv(res).splitlines()))
        for row, cell in zip(rows, res.cells):
            assert float(row["mean_sindr_db"]) == cell.mean_sindr_db
            assert float(row["mean_sir_db"]) == cell.mean_sir_db
            assert int(row["n_realizations"]) == cell.n_realizations

    def test_linear_limit_rows(self, tmp_path, capsys):
        args = ["sweep", "--out", str(tmp_path), *FAST, "--set", "pa.a3=0", "--set", "pa.tolerance_fraction=0"]
        assert main(args) == EXIT_OK
        rows = read_rows(tmp_path / "sweep.csv")
        zf = [r for r in rows if r["precoder"] == "naive_zf"]
        nla = [r for r in rows if r["precoder"] == "nla_zf"]
        assert len(zf) == len(nla) == 22
        for a, b in zip(zf, nla):
            for col in ("mean_sindr_db", "mean_sir_db", "mean_sdr_db"):
                assert abs(float(a[col]) - float(b[col])) <= 1e-9

    def test_linear_columns_behind_flag(self, tmp_path, capsys):
        main(["sweep", "--out", str(tmp_path), *FAST, "--linear-output"])
        header = (tmp_path / "sweep.csv").read_text().splitlines()[0].split(",")
        assert "mean_sindr_lin" in header

    def test_precoder_flag(self, tmp_path, capsys):
        main(["sweep", "--out", str(tmp_path), *FAST, "--precoder", "zf"])
        assert {r["precoder"] for r in read_rows(tmp_path / "sweep.csv")} == {"naive_zf"}

    def test_unwritable_out(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["sweep", "--out", str(blocker / "sub"), *FAST]) == EXIT_IO

    def test_failure_threshold(self, tmp_path, capsys):
        args = ["sweep", "--out", str(tmp_path), *FAST, "--tol", "1e-15", "--set", "solver.max_iter=1"]
        assert main(args) == EXIT_NUMERIC
        assert "exceeds threshold" in capsys.readouterr().err

    def test_config_error_exit(self, tmp_path, capsys):
        assert main(["sweep", "--out", str(tmp_path), "-M", "3"]) == EXIT_CONFIG
        assert "M must be even" in capsys.readouterr().err

    def test_missing_config_exit(self, tmp_path, capsys):
        assert main(["sweep", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG


def solve_fields(text):
    return {row[0]: row[1:] for row in csv.reader(text.splitlines()) if row and not row[0].startswith("#")}


class TestSolveCommand:
    def test_symmetric_instance(self, capsys):
        assert main(["solve", "--instance", str(CONFIGS / "symmetric_instance.json")]) == EXIT_OK
        fields = solve_fields(capsys.readouterr().out)
        assert fields["iterations"] == ["1"]
        assert float(fields["r_1[0]"][0]) == pytest.approx(1.0, abs=1e-12)
        assert float(fields["r_2[0]"][0]) == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_entry(self, capsys):
        assert main(["solve", "--channel", "1,1;0,1"]) == EXIT_NUMERIC
        err = capsys.readouterr().err
        assert "DegenerateChannel" in err and "h21" in err

    def test_random_instance(self, tmp_path, capsys):
        rng = np.random.default_rng(8)
        H = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
        inst = {"H": [[[z.real, z.imag] for z in row] for row in H]}
        path = tmp_path / "inst.json"
        path.write_text(json.dumps(inst))
        assert main(["solve", "--instance", str(path), "--out", str(tmp_path)]) == EXIT_OK
        report = json.loads((tmp_path / "solve.json").read_text())
        assert report["converged"]
        assert report["max_offdiag_over_min_gain"] <= 1e-3
        for r1, r2 in report["ratios"]:
            assert abs(r1 - 1) <= 1e-4 and abs(r2 - 1) <= 1e-4
        np.testing.assert_allclose(report["column_power"], [0.5, 0.5], rtol=1e-12)

    def test_non_convergence_exit(self, capsys):
        args = ["solve", "--channel", "1,0.4;0.7j,1", "--tol", "1e-15", "--set", "solver.max_iter=1"]
        assert main(args) == EXIT_NUMERIC

    def test_needs_instance(self, capsys):
        assert main(["solve"]) == EXIT_CONFIG

    def test_pa_length_mismatch(self, capsys):
        assert main(["solve", "--channel", "1,0.4;0.7j,1", "--pa", "1:-0.05"]) == EXIT_CONFIG
