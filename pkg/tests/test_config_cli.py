import json

import numpy as np
import pytest

from proxsweep.cli import SCHEMA_VERSION, atomic_write, main
from proxsweep.config import parse_config
from proxsweep.errors import ConfigError

PLAY_SOLVE = {
    "constraint": {"family": "play", "params": {"rho": 1.0}},
    "u": {"nodes": [0.0, 1.0], "values": [0.0, 2.0]},
    "w": {"nodes": [0.0, 1.0], "values": [0.0, 0.0]},
    "x0": [0.0],
    "solver": {"grid_n": 100},
}


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return str(p)


class TestParse:
    def test_syntax_error_location(self):
        with pytest.raises(ConfigError) as ei:
            parse_config('{\n  "seed": 1,\n  oops\n}')
        assert "line 3" in str(ei.value)

    def test_collects_every_problem(self):
        doc = {"constraint": {"family": "torus"}, "solver": {"scheme": "rk4", "bogus": 1},
               "seed": -1}
        with pytest.raises(ConfigError) as ei:
            parse_config(json.dumps(doc), "certify")
        probs = ei.value.problems
        assert len(probs) >= 4
        assert any("solver.bogus: unknown key" == p for p in probs)

    def test_missing_fields(self):
        with pytest.raises(ConfigError, match="missing required field.*x0"):
            parse_config(json.dumps({k: v for k, v in PLAY_SOLVE.items() if k != "x0"}), "solve")

    def test_inline_and_file_exclusive(self):
        doc = dict(PLAY_SOLVE, u={"nodes": [0, 1], "values": [0, 1], "file": "u.csv"})
        with pytest.raises(ConfigError, match="mutually exclusive"):
            parse_config(json.dumps(doc), "solve")

    def test_path_file(self, tmp_path):
        (tmp_path / "u.csv").write_text("t,v0\n0,0\n1,2\n")
        doc = dict(PLAY_SOLVE, u={"file": "u.csv"})
        cfg = parse_config(json.dumps(doc), "solve", base_dir=tmp_path)
        assert cfg.load_path("u", tmp_path).n_steps == 100

    def test_bad_path_file(self, tmp_path):
        (tmp_path / "u.csv").write_text("time,v0\n0,0\n")
        with pytest.raises(ConfigError, match="u:"):
            parse_config(json.dumps(dict(PLAY_SOLVE, u={"file": "u.csv"})), "solve",
                         base_dir=tmp_path)

    def test_scales_must_decrease(self):
        with pytest.raises(ConfigError, match="strictly decreasing"):
            parse_config(json.dumps({"study": {"scales": [0.1, 0.2]}}), "study")


class TestCLI:
    def test_solve_play(self, tmp_path):
        out = tmp_path / "out"
        assert main(["solve", "--config", write(tmp_path, PLAY_SOLVE), "--out", str(out)]) == 0
        rep = json.loads((out / "solve_report.json").read_text())
        assert rep["schema_version"] == SCHEMA_VERSION and rep["passed"]
        lines = (out / "trajectory.csv").read_text().splitlines()
        assert lines[0].startswith("t,x0,xi0,active") and len(lines) == 102
        assert float(lines[-1].split(",")[2]) == pytest.approx(1.0)

    def test_scheme_and_seed_flags(self, tmp_path):
        out = tmp_path / "o"
        code = main(["solve", "--config", write(tmp_path, PLAY_SOLVE), "--out", str(out),
                     "--scheme", "boundary-ode", "--seed", str(2**64 - 1), "--grid-n", "50"])
        assert code == 0
        rep = json.loads((out / "solve_report.json").read_text())
        assert rep["scheme"] == "boundary-ode" and rep["seed"] == 2**64 - 1
        assert rep["grid"]["n_steps"] == 50

    def test_seed_out_of_range(self, tmp_path, capsys):
        assert main(["solve", "--config", write(tmp_path, PLAY_SOLVE), "--seed", str(2**64)]) == 2
        assert "seed" in capsys.readouterr().err

    def test_certify_ball(self, tmp_path):
        doc = {"constraint": {"family": "ball", "params": {"n": 2}}}
        out = tmp_path / "c"
        assert main(["certify", "--config", write(tmp_path, doc), "--out", str(out)]) == 0
        rep = json.loads((out / "certify_report.json").read_text())
        est = rep["certification"]["estimates"]["c"]
        assert est["raw"] == pytest.approx(2.0) and est["certified"] == pytest.approx(1.9)
        assert not any(rep["reverification_violations"].values())

    def test_gate_violation_writes_nothing(self, tmp_path, capsys):
        doc = {
            "constraint": {"family": "star"},
            "u": {"nodes": [0, 1], "values": [[1.2, 0.0], [1.4, 1.0]]},
            "w": {"nodes": [0, 1], "values": [[0, 0, 0], [0.1, 0, 0.3]]},
            "x0": [1.2, 0.0],
        }
        out = tmp_path / "g"
        assert main(["solve", "--config", write(tmp_path, doc), "--out", str(out)]) == 2
        assert "refine factor" in capsys.readouterr().err
        assert not out.exists() or not any(out.iterdir())

    def test_bad_config_exit_code(self, tmp_path, capsys):
        assert main(["solve", "--config", write(tmp_path, '{"seed": }')]) == 2
        assert "line 1" in capsys.readouterr().err
        assert main(["certify", "--config", str(tmp_path / "missing.json")]) == 2

    def test_solve_implicit(self, tmp_path):
        doc = {
            "constraint": {"family": "play"},
            "u": {"nodes": [0, 1], "values": [1.0, 1.1]},
            "x0": [1.0],
            "solver": {"grid_n": 100},
            "implicit": {"state_map": {"kind": "linear", "Gamma": 0.5}, "epsilon": 0.1},
        }
        out = tmp_path / "i"
        assert main(["solve-implicit", "--config", write(tmp_path, doc), "--out", str(out)]) == 0
        rep = json.loads((out / "iteration_report.json").read_text())
        assert rep["passed"] and rep["iteration_report"]["converged"]

    def test_study_without_config(self, tmp_path):
        out = tmp_path / "s"
        code = main(["study", "--kind", "order", "--benchmark", "play", "--out", str(out)])
        assert code == 0
        assert (out / "study_order.csv").read_text().startswith("n_steps,h,sup_error")
        assert json.loads((out / "study_order.json").read_text())["passed"]

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit):
            main([])


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "d" / "f.txt"
    atomic_write(p, "one")
    atomic_write(p, "two")
    assert p.read_text() == "two"
    assert [q.name for q in p.parent.iterdir()] == ["f.txt"]
