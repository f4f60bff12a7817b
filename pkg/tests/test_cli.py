import json
from pathlib import Path

import numpy as np
import pytest

from gridtopo.chronics import load_chronic
from gridtopo.cli import main
from gridtopo.grid import save_grid
from gridtopo.nn import load as load_weights

from conftest import make_grid


@pytest.fixture
def workspace(tmp_path, mesh_grid):
    save_grid(mesh_grid, tmp_path / "grid.json")
    profile = {"base_load_p": {"d2": 20.0, "d4": 30.0, "d5": 8.0},
               "gen_voltage": {"g1": 1.02, "g3": 1.01}}
    (tmp_path / "profile.json").write_text(json.dumps(profile))
    return tmp_path


def run(argv):
    return main([str(a) for a in argv])


class TestGenChronics:
    def test_writes_scenarios_and_manifest(self, workspace):
        rc = run(["gen-chronics", "--grid", workspace / "grid.json",
                  "--out", workspace / "scen", "--count", "2", "--days", "1",
                  "--profile", workspace / "profile.json", "--seed", "5"])
        assert rc == 0
        assert (workspace / "scen" / "manifest.txt").exists()
        chronic = load_chronic(workspace / "scen" / "scenario_000")
        assert chronic.n_steps == 288

    def test_deterministic_across_runs(self, workspace):
        for out in ("a", "b"):
            assert run(["gen-chronics", "--grid", workspace / "grid.json",
                        "--out", workspace / out, "--count", "1",
                        "--profile", workspace / "profile.json", "--seed", "3"]) == 0
        for f in sorted((workspace / "a" / "scenario_000").iterdir()):
            assert f.read_bytes() == \
                (workspace / "b" / "scenario_000" / f.name).read_bytes()

    def test_level_ramp(self, workspace):
        rc = run(["gen-chronics", "--grid", workspace / "grid.json",
                  "--out", workspace / "ramp", "--count", "2",
                  "--profile", workspace / "profile.json",
                  "--level", "0.8", "--level-max", "1.0"])
        assert rc == 0
        lo = load_chronic(workspace / "ramp" / "scenario_000")
        hi = load_chronic(workspace / "ramp" / "scenario_001")
        assert hi.load_p.sum() > lo.load_p.sum()


@pytest.fixture
def pipeline(workspace):
    """Chronics, action manifest, dataset, and pretrained weights."""
    run(["gen-chronics", "--grid", workspace / "grid.json", "--out",
         workspace / "scen", "--count", "2", "--profile",
         workspace / "profile.json", "--seed", "1"])
    assert run(["build-actions", "--grid", workspace / "grid.json",
                "--out", workspace / "actions.json", "--budget", "3",
                "--states", "2", "--scenarios", workspace / "scen",
                "--mode", "dc"]) == 0
    assert run(["gen-imitation", "--grid", workspace / "grid.json",
                "--actions", workspace / "actions.json",
                "--scenarios", workspace / "scen", "--steps", "4",
                "--out", workspace / "data.imd", "--mode", "dc"]) == 0
    assert run(["pretrain", "--grid", workspace / "grid.json",
                "--actions", workspace / "actions.json",
                "--dataset", workspace / "data.imd",
                "--out", workspace / "imit.qw", "--epochs", "2",
                "--batch-size", "4", "--trunk", "16,8", "--head", "8",
                "--seed", "2"]) == 0
    return workspace


class TestPipeline:
    def test_artifacts_exist_and_load(self, pipeline):
        params = load_weights(pipeline / "imit.qw")
        assert params.n_parameters > 0
        assert params.manifest_hash

    def test_train_and_evaluate(self, pipeline):
        assert run(["train", "--grid", pipeline / "grid.json",
                    "--actions", pipeline / "actions.json",
                    "--scenarios", pipeline / "scen",
                    "--weights", pipeline / "imit.qw",
                    "--out", pipeline / "run", "--episodes", "1",
                    "--horizon", "10", "--top-k", "2", "--seed", "4",
                    "--mode", "dc"]) == 0
        assert (pipeline / "run" / "final.qw").exists()
        assert run(["evaluate", "--grid", pipeline / "grid.json",
                    "--actions", pipeline / "actions.json",
                    "--scenarios", pipeline / "scen",
                    "--agent", "qnet", "--weights", pipeline / "run" / "final.qw",
                    "--top-k", "2", "--mode", "dc",
                    "--out", pipeline / "report.csv"]) == 0
        header = (pipeline / "report.csv").read_text().splitlines()[0]
        assert header.startswith("scenario_id,steps,chronic_score,game_over,cause")

    def test_evaluate_do_nothing_without_actions(self, pipeline, capsys):
        rc = run(["evaluate", "--grid", pipeline / "grid.json",
                  "--scenarios", pipeline / "scen", "--agent", "do-nothing",
                  "--mode", "dc"])
        assert rc == 0
        assert "Game Over" in capsys.readouterr().out

    def test_inspect_outputs(self, pipeline, capsys):
        assert run(["inspect", "--weights", pipeline / "imit.qw",
                    "--actions", pipeline / "actions.json",
                    "--layout", pipeline / "grid.json",
                    "--dataset", pipeline / "data.imd"]) == 0
        out = capsys.readouterr().out
        assert "manifest hash" in out
        assert "total observation length" in out
        assert "samples:" in out


class TestExitCodes:
    def test_usage_error_is_one(self, capsys):
        assert run(["evaluate", "--bogus-flag"]) == 1
        assert run(["not-a-command"]) == 1

    def test_runtime_failure_is_two(self, tmp_path, capsys):
        rc = run(["evaluate", "--grid", tmp_path / "missing.json",
                  "--scenarios", tmp_path])
        assert rc == 2
        assert "gridtopo:" in capsys.readouterr().err

    def test_weights_hash_mismatch_is_runtime_error(self, pipeline, workspace):
        # rebuild the action manifest with a different budget: new hash
        assert run(["build-actions", "--grid", workspace / "grid.json",
                    "--out", workspace / "actions2.json", "--budget", "0"]) == 0
        rc = run(["evaluate", "--grid", workspace / "grid.json",
                  "--actions", workspace / "actions2.json",
                  "--scenarios", workspace / "scen",
                  "--agent", "qnet", "--weights", workspace / "imit.qw",
                  "--mode", "dc"])
        assert rc == 2
