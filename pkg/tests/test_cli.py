import json
from pathlib import Path

import pytest

from ctdsat.cli import main
from ctdsat.formula import dimacs_read, dimacs_write


def run_cli(*args) -> int:
    return main([str(a) for a in args])


def only_run_dir(root: Path, command: str) -> Path:
    dirs = [p for p in root.iterdir() if p.name.startswith(command + "-")]
    assert len(dirs) == 1
    return dirs[0]


@pytest.fixture()
def example3_cnf(tmp_path, example3):
    path = tmp_path / "example3.cnf"
    path.write_text(dimacs_write(example3))
    return path


class TestGenerate:
    def test_writes_requested_files(self, tmp_path):
        out = tmp_path / "runs"
        code = run_cli("generate", "--n", 50, "--k", 3, "--alpha", "4.0",
                       "--count", 10, "--seed", 1, "--out-dir", out)
        assert code == 0
        run_dir = only_run_dir(out, "generate")
        files = sorted(run_dir.glob("*.cnf"))
        assert len(files) == 10
        for path in files:
            f = dimacs_read(path.read_text())
            assert f.n == 50 and f.m == 200
        assert (run_dir / "config.json").exists()

    def test_missing_parameter_is_user_error(self, tmp_path):
        assert run_cli("generate", "--n", 10, "--out-dir", tmp_path) == 1

    def test_unknown_flag_is_user_error(self, tmp_path):
        assert run_cli("generate", "--frobnicate", 1) == 1

    def test_rerun_is_byte_identical(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert run_cli("generate", "--n", 20, "--k", 3, "--alpha", "3.0",
                           "--count", 5, "--seed", 9, "--out-dir", out) == 0
        dir_a = only_run_dir(out_a, "generate")
        dir_b = only_run_dir(out_b, "generate")
        files_a = sorted(p.name for p in dir_a.iterdir())
        assert files_a == sorted(p.name for p in dir_b.iterdir())
        for name in files_a:
            assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes()


class TestSolve:
    def test_solves_known_formula(self, tmp_path, example3_cnf, example3_solutions):
        out = tmp_path / "runs"
        assert run_cli("solve", "--dimacs", example3_cnf, "--seed", 3,
                       "--out-dir", out) == 0
        record = json.loads(
            (only_run_dir(out, "solve") / "outcome.json").read_text())
        assert record["status"] == "SOLVED"
        wanted = {"".join("1" if b else "0" for b in s) for s in example3_solutions}
        assert record["solution"] in wanted

    def test_unreadable_file_is_user_error(self, tmp_path):
        assert run_cli("solve", "--dimacs", tmp_path / "nope.cnf",
                       "--seed", 1, "--out-dir", tmp_path) == 1


class TestEscape:
    def test_deterministic_estimates(self, tmp_path, example3_cnf):
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            assert run_cli("escape", "--dimacs", example3_cnf,
                           "--trajectories", 400, "--seed", 7,
                           "--min-points", 50, "--out-dir", out) == 0
            run_dir = only_run_dir(out, "escape")
            outs.append((run_dir / "estimate.json").read_bytes()
                        + (run_dir / "survival.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_worker_count_does_not_change_output(self, tmp_path, example3_cnf):
        blobs = []
        for sub, workers in (("w1", 1), ("w2", 2)):
            out = tmp_path / sub
            assert run_cli("escape", "--dimacs", example3_cnf,
                           "--trajectories", 300, "--seed", 5,
                           "--min-points", 50, "--workers", workers,
                           "--out-dir", out) == 0
            run_dir = only_run_dir(out, "escape")
            blobs.append((run_dir / "estimate.json").read_bytes()
                         + (run_dir / "survival.csv").read_bytes())
        assert blobs[0] == blobs[1]


class TestEnsemble:
    def test_records_written_and_reproducible(self, tmp_path):
        blobs = []
        for sub, workers in (("x", 1), ("y", 2)):
            out = tmp_path / sub
            assert run_cli("ensemble", "--n", 15, "--k", 3, "--alphas", "2.5,3.0",
                           "--count", 3, "--trajectories", 300, "--seed", 21,
                           "--min-points", 100,
                           "--workers", workers, "--out-dir", out) == 0
            run_dir = only_run_dir(out, "ensemble")
            blobs.append((run_dir / "records.jsonl").read_bytes())
        assert blobs[0] == blobs[1]
        lines = blobs[0].decode().splitlines()
        assert len(lines) == 6
        first = json.loads(lines[0])
        assert first["n"] == 15 and first["alpha"] == 2.5


class TestClusters:
    def test_report_mode(self, tmp_path, example3_cnf):
        out = tmp_path / "runs"
        assert run_cli("clusters", "--dimacs", example3_cnf,
                       "--out-dir", out) == 0
        payload = json.loads(
            (only_run_dir(out, "clusters") / "report.json").read_text())
        assert payload["n_solutions"] == 4
        assert payload["n_clusters"] == 1

    def test_sweep_mode(self, tmp_path):
        out = tmp_path / "runs"
        assert run_cli("clusters", "--alphas", "0.0,3.0", "--ns", "8",
                       "--count", 20, "--seed", 2, "--out-dir", out) == 0
        text = (only_run_dir(out, "clusters") / "sweep.csv").read_text()
        lines = text.splitlines()
        assert lines[0] == "alpha,n,mean_nc,stderr,count"
        assert len(lines) == 3


class TestBasin:
    def test_small_map_artifacts(self, tmp_path, example3_cnf):
        out = tmp_path / "runs"
        assert run_cli("basin", "--dimacs", example3_cnf, "--resolution", 8,
                       "--background-seed", 4, "--out-dir", out) == 0
        run_dir = only_run_dir(out, "basin")
        assert (run_dir / "time_map.pgm").read_bytes().startswith(b"P5\n8 8\n")
        assert (run_dir / "solution_map.ppm").read_bytes().startswith(b"P6\n8 8\n")
        assert len((run_dir / "map.csv").read_text().splitlines()) == 65

    def test_unsat_formula_is_user_error(self, tmp_path, unsat3):
        path = tmp_path / "unsat.cnf"
        path.write_text(dimacs_write(unsat3))
        assert run_cli("basin", "--dimacs", path, "--out-dir", tmp_path) == 1

    def test_worker_invariance(self, tmp_path, example3_cnf):
        blobs = []
        for sub, workers in (("p", 1), ("q", 3)):
            out = tmp_path / sub
            assert run_cli("basin", "--dimacs", example3_cnf, "--resolution", 6,
                           "--background-seed", 4, "--workers", workers,
                           "--out-dir", out) == 0
            run_dir = only_run_dir(out, "basin")
            blobs.append(b"".join((run_dir / name).read_bytes() for name in
                                  ("time_map.pgm", "solution_map.ppm", "map.csv")))
        assert blobs[0] == blobs[1]


class TestScaling:
    def test_tables_from_records(self, tmp_path):
        out = tmp_path / "runs"
        assert run_cli("ensemble", "--n", 15, "--k", 3,
                       "--alphas", "2.6,2.8,3.0", "--count", 3,
                       "--trajectories", 300, "--seed", 31, "--min-points", 100,
                       "--out-dir", out) == 0
        records = only_run_dir(out, "ensemble") / "records.jsonl"
        out2 = tmp_path / "scal"
        assert run_cli("scaling", "--records", records, "--d-alpha", "0.2",
                       "--alpha-chi", "3.28", "--out-dir", out2) == 0
        run_dir = only_run_dir(out2, "scaling")
        summary = json.loads((run_dir / "scaling_result.json").read_text())
        assert summary["eta_c"] == 0.5
        assert (run_dir / "fig1.csv").exists()
        # single n and tiny counts: no collapse, no histograms required
        assert "3" in summary["k"]

    def test_missing_records_is_user_error(self, tmp_path):
        assert run_cli("scaling", "--records", tmp_path / "none.jsonl",
                       "--out-dir", tmp_path) == 1


class TestConfigFile:
    def test_config_supplies_defaults_and_flags_override(self, tmp_path, example3_cnf):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "schema_version": 1,
            "solve": {"seed": 11, "t_max": 50.0},
        }))
        out = tmp_path / "runs"
        assert run_cli("solve", "--dimacs", example3_cnf, "--config", cfg,
                       "--out-dir", out) == 0
        echoed = json.loads(
            (only_run_dir(out, "solve") / "config.json").read_text())
        assert echoed["params"]["seed"] == 11
        assert echoed["params"]["t_max"] == 50.0

    def test_schema_version_mismatch(self, tmp_path, example3_cnf):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"schema_version": 99, "solve": {"seed": 1}}))
        assert run_cli("solve", "--dimacs", example3_cnf, "--config", cfg,
                       "--out-dir", tmp_path) == 1

    def test_unknown_config_key(self, tmp_path, example3_cnf):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"schema_version": 1,
                                   "solve": {"bogus": 1, "seed": 2}}))
        assert run_cli("solve", "--dimacs", example3_cnf, "--config", cfg,
                       "--out-dir", tmp_path) == 1

    def test_env_var_output_root(self, tmp_path, example3_cnf, monkeypatch):
        monkeypatch.setenv("CTDSAT_OUT", str(tmp_path / "env_root"))
        monkeypatch.chdir(tmp_path)
        assert run_cli("solve", "--dimacs", example3_cnf, "--seed", 2) == 0
        assert (tmp_path / "env_root").exists()

    def test_json_progress(self, tmp_path, example3_cnf, capsys):
        assert run_cli("solve", "--dimacs", example3_cnf, "--seed", 2,
                       "--json", "--out-dir", tmp_path / "r") == 0
        lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
        assert any(l["event"] == "solve.done" for l in lines)
