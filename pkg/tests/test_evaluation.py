import numpy as np
import pytest

from gridtopo.actions import ActionSpace, DO_NOTHING, build_full_space
from gridtopo.env import EnvConfig, Environment, observation_size
from gridtopo.evaluation import (DoNothingAgent, EWAgent, EWConfig, EvaluationReport,
                                 GreedyAgent, QAgent, ScenarioResult, evaluate,
                                 ew_policy, format_report_table, run_scenario,
                                 sweep_thresholds, warning_flag, write_report_csv)
from gridtopo.nn import NetConfig, NetworkParams

from conftest import make_chronic, make_grid
from test_training import bias_net


@pytest.fixture
def star_grid():
    """Three radial feeders: DC loadings are exactly load/limit per line."""
    return make_grid(lines=[("L2", 1, 2, 0.1, 100.0), ("L3", 1, 3, 0.1, 100.0),
                            ("L4", 1, 4, 0.1, 100.0)],
                     gens=[("g1", 1, 500.0)],
                     loads=[("d2", 2), ("d3", 3), ("d4", 4)])


def star_env(star_grid, loads=(40.0, 90.0, 60.0), steps=10):
    env = Environment(star_grid, EnvConfig(mode="dc"))
    env.reset(make_chronic(star_grid, list(loads), steps=steps))
    return env


class TestWarningFlag:
    def test_huge_threshold_never_fires(self, star_grid):
        assert not warning_flag(star_env(star_grid), 1e6)

    def test_zero_threshold_fires_on_any_flow(self, star_grid):
        assert warning_flag(star_env(star_grid), 0.0)

    def test_fixture_loadings_against_submitted_threshold(self, star_grid):
        # predicted loadings (0.4, 0.9, 0.6): 0.9 clears 0.885 but not 0.95
        env = star_env(star_grid)
        assert warning_flag(env, 0.885)
        assert not warning_flag(env, 0.95)

    def test_predicted_catastrophe_raises_flag(self, star_grid):
        # next step pushes a feeder to rho 2: instant trip + unserved load
        chronic = make_chronic(star_grid, [[40.0, 90.0, 60.0], [40.0, 200.0, 60.0]])
        env = Environment(star_grid, EnvConfig(mode="dc"))
        env.reset(chronic)
        assert warning_flag(env, 1e6)


class TestEWPolicy:
    def test_quiet_grid_does_nothing(self, star_grid):
        env = star_env(star_grid)
        params = bias_net(observation_size(star_grid), 1, [0.0])
        space = ActionSpace([DO_NOTHING])
        idx, warned = ew_policy(params, env, env.observation(), space,
                                EWConfig(threshold=1e6))
        assert idx == 0 and not warned

    def test_infinite_threshold_extensionally_do_nothing(self, star_grid):
        space = ActionSpace([a for a in build_full_space(star_grid).actions
                             if a.kind != "combo"])
        params = bias_net(observation_size(star_grid), len(space),
                          np.linspace(1, 0, len(space)))
        agent = EWAgent(params, space, EWConfig(threshold=1e9))
        rep_ew = evaluate(agent, star_grid, [make_chronic(star_grid, [40.0, 90.0, 60.0],
                                                          steps=8)],
                          EnvConfig(mode="dc"))
        rep_dn = evaluate(DoNothingAgent(), star_grid,
                          [make_chronic(star_grid, [40.0, 90.0, 60.0], steps=8)],
                          EnvConfig(mode="dc"))
        assert rep_ew.rows[0].chronic_score == rep_dn.rows[0].chronic_score
        assert rep_ew.rows[0].steps == rep_dn.rows[0].steps

    def test_zero_threshold_degenerates_to_guided(self, star_grid):
        env = star_env(star_grid)
        space = ActionSpace([a for a in build_full_space(star_grid).actions
                             if a.kind != "combo"])
        params = bias_net(observation_size(star_grid), len(space),
                          np.zeros(len(space)))
        idx, warned = ew_policy(params, env, env.observation(), space,
                                EWConfig(threshold=1e-9, top_k=len(space)))
        assert warned

    def test_threshold_must_be_positive(self):
        with pytest.raises(ValueError):
            EWConfig(threshold=0.0)


class TestEvaluate:
    def test_do_nothing_on_calm_scenario(self, star_grid):
        chronic = make_chronic(star_grid, [40.0, 50.0, 60.0], steps=12)
        report = evaluate(DoNothingAgent(), star_grid, [chronic], EnvConfig(mode="dc"))
        row = report.rows[0]
        assert not row.game_over
        assert row.steps == 11
        # per-line terms are constant: score = steps * sum(1 - rho_i^2)
        per_step = (1 - 0.4 ** 2) + (1 - 0.5 ** 2) + (1 - 0.6 ** 2)
        assert row.chronic_score == pytest.approx(11 * per_step)

    def test_dead_scenario_contributes_zero(self, star_grid):
        chronic = make_chronic(star_grid, [[40.0, 90.0, 60.0], [40.0, 200.0, 60.0],
                                           [40.0, 90.0, 60.0]])
        report = evaluate(DoNothingAgent(), star_grid, [chronic], EnvConfig(mode="dc"))
        assert report.rows[0].game_over
        assert report.rows[0].chronic_score == 0.0
        assert report.total_score == 0.0

    def test_unusable_scenarios_recorded_not_fatal(self, star_grid):
        diverging = make_chronic(star_grid, [4e4, 4e4, 4e4], steps=4,
                                 gen_p=np.zeros(1))
        invalid = make_chronic(star_grid, [40.0, 50.0, 60.0], steps=4,
                               gen_p=np.array([1e9]))     # above p_max
        good = make_chronic(star_grid, [40.0, 50.0, 60.0], steps=4)
        report = evaluate(DoNothingAgent(), star_grid, [diverging, invalid, good],
                          EnvConfig(mode="ac"))
        assert report.rows[0].game_over and "unusable" in report.rows[0].cause
        assert report.rows[1].game_over and "unusable" in report.rows[1].cause
        assert not report.rows[2].game_over

    def test_parallel_workers_match_sequential(self, star_grid):
        chronics = [make_chronic(star_grid, [40.0 + i, 50.0, 60.0], steps=6)
                    for i in range(3)]
        seq = evaluate(DoNothingAgent(), star_grid, chronics, EnvConfig(mode="dc"))
        par = evaluate(DoNothingAgent(), star_grid, chronics, EnvConfig(mode="dc"),
                       workers=2)
        assert [(r.scenario, r.steps, r.chronic_score) for r in seq.rows] == \
               [(r.scenario, r.steps, r.chronic_score) for r in par.rows]

    def test_episode_log_written(self, star_grid, tmp_path):
        import json as json_mod
        chronic = make_chronic(star_grid, [40.0, 50.0, 60.0], steps=5)
        evaluate(DoNothingAgent(), star_grid, [chronic], EnvConfig(mode="dc"),
                 log_dir=tmp_path / "logs")
        lines = (tmp_path / "logs" / "fixture.jsonl").read_text().splitlines()
        assert len(lines) == 4
        rec = json_mod.loads(lines[0])
        assert set(rec) == {"t", "action", "reward", "step_score", "trips", "cause"}
        assert rec["action"] == 0

    def test_greedy_agent_runs(self, star_grid):
        space = ActionSpace([a for a in build_full_space(star_grid).actions
                             if a.kind != "combo"])
        chronic = make_chronic(star_grid, [40.0, 50.0, 60.0], steps=4)
        report = evaluate(GreedyAgent(space), star_grid, [chronic], EnvConfig(mode="dc"))
        assert not report.rows[0].game_over


class TestReports:
    def _report(self):
        rows = [ScenarioResult("s0", 287, 4000.0, False, "completed", 1.0),
                ScenarioResult("s1", 100, 0.0, True, "islanded", 2.0),
                ScenarioResult("s2", 287, 5000.0, False, "completed", 1.5)]
        return EvaluationReport("test", rows)

    def test_aggregates_recompute_from_rows(self):
        rep = self._report()
        assert rep.total_score == 9000.0
        assert rep.game_overs == 1
        assert rep.mean_score_all == pytest.approx(3000.0)
        assert rep.mean_score_alive == pytest.approx(4500.0)
        assert rep.mean_score_alive >= rep.mean_score_all

    def test_csv_schema_and_reproducibility(self, tmp_path):
        rep = self._report()
        write_report_csv(rep, tmp_path / "a.csv", include_timing=True)
        header = (tmp_path / "a.csv").read_text().splitlines()[0]
        assert header == "scenario_id,steps,chronic_score,game_over,cause,mean_decision_ms"
        write_report_csv(rep, tmp_path / "b.csv", include_timing=False)
        write_report_csv(rep, tmp_path / "c.csv", include_timing=False)
        assert (tmp_path / "b.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()
        assert "ms" not in (tmp_path / "b.csv").read_text().splitlines()[0]

    def test_table_formatting(self):
        text = format_report_table([self._report()])
        assert "Game Over" in text and "Mean Score w/o Dead" in text
        assert "4500.00" in text

    def test_sweep_covers_grid(self, star_grid):
        space = ActionSpace([a for a in build_full_space(star_grid).actions
                             if a.kind != "combo"])
        params = bias_net(observation_size(star_grid), len(space),
                          np.zeros(len(space)))
        chronic = make_chronic(star_grid, [40.0, 50.0, 60.0], steps=4)
        reports = sweep_thresholds(params, space, star_grid, [chronic],
                                   thresholds=(0.5, 0.95), top_k=2,
                                   env_config=EnvConfig(mode="dc"))
        assert set(reports) == {0.5, 0.95}
        assert all(len(r.rows) == 1 for r in reports.values())
