"""Batch evaluation, the Early Warning inference policy, and reports.

The Early Warning policy simulates doing nothing; only when some
predicted line loading clears the threshold (or the prediction itself is
a catastrophe) does the agent search its top-Q candidates for the best
simulated outcome. Otherwise it leaves the grid alone, which is both
cheap and robust on quiet steps.
"""

from __future__ import annotations

import csv
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .actions import ActionSpace, Action, DO_NOTHING
from .chronics import Chronic, load_chronic
from .env import CAUSE_COMPLETED, EnvConfig, Environment, EpisodeLogger, \
    ScenarioUnusable, observation_layout
from .grid import GridModel
from .nn import NetworkParams, forward
from .training import guided_select

TABLE_THRESHOLDS = (0.85, 0.875, 0.90, 0.925, 0.95, 0.975)


@dataclass
class EWConfig:
    threshold: float = 0.885
    top_k: int = 10
    selection_key: str = "reward"       # or "step_score"

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")

    def to_dict(self):
        from dataclasses import asdict
        return asdict(self)

    @staticmethod
    def from_dict(d):
        return EWConfig(**d)


def _loading_block(grid: GridModel, observation: np.ndarray) -> np.ndarray:
    offset = 0
    for name, width in observation_layout(grid):
        if name == "loading":
            return observation[offset:offset + width]
        offset += width
    raise KeyError("loading block missing from layout")


def warning_flag(env: Environment, threshold: float) -> bool:
    """True when the do-nothing forecast predicts trouble.

    Trouble means any predicted line loading above the threshold, or a
    predicted game over of any kind (a diverging forecast counts as the
    loudest possible warning).
    """
    predicted = env.simulate(DO_NOTHING)
    if predicted.done and predicted.info.cause != CAUSE_COMPLETED:
        return True
    loadings = _loading_block(env.grid, predicted.observation)
    return bool(np.any(loadings > threshold))


def ew_policy(params: NetworkParams, env: Environment, observation: np.ndarray,
              space: ActionSpace, config: EWConfig) -> tuple[int, bool]:
    """Returns (action index, whether a warning fired)."""
    if not warning_flag(env, config.threshold):
        return 0, False
    idx, _ = guided_select(params, env, space, observation,
                           config.top_k, config.selection_key)
    return idx, True


# ---------------------------------------------------------------------------
# Agents


class DoNothingAgent:
    name = "do-nothing"

    def decide(self, env: Environment, observation: np.ndarray) -> Action:
        self.last_warned = False
        self.last_index = 0
        return DO_NOTHING


class GreedyAgent:
    """Exhaustive one-step expert: simulate every legal action, keep the best."""

    name = "greedy"

    def __init__(self, space: ActionSpace):
        self.space = space

    def decide(self, env: Environment, observation: np.ndarray) -> Action:
        self.last_warned = True
        from .imitation import action_labels
        labels = action_labels(env, self.space)
        self.last_index = int(np.argmax(labels))
        return self.space[self.last_index]


class QAgent:
    """Guided selection with the trained network at every step."""

    name = "qnet"

    def __init__(self, params: NetworkParams, space: ActionSpace, top_k: int = 10):
        self.params = params
        self.space = space
        self.top_k = top_k

    def decide(self, env: Environment, observation: np.ndarray) -> Action:
        self.last_warned = True
        idx, _ = guided_select(self.params, env, self.space, observation, self.top_k)
        self.last_index = idx
        return self.space[idx]


class EWAgent:
    name = "ew"

    def __init__(self, params: NetworkParams, space: ActionSpace, config: EWConfig):
        self.params = params
        self.space = space
        self.config = config

    def decide(self, env: Environment, observation: np.ndarray) -> Action:
        idx, warned = ew_policy(self.params, env, observation, self.space, self.config)
        self.last_warned = warned
        self.last_index = idx
        return self.space[idx]


# ---------------------------------------------------------------------------
# Evaluation runs


@dataclass
class ScenarioResult:
    scenario: str
    steps: int
    chronic_score: float
    game_over: bool
    cause: str
    mean_decision_ms: float
    decision_ms: list[float] = field(default_factory=list, repr=False)
    warned_ms: list[float] = field(default_factory=list, repr=False)


@dataclass
class EvaluationReport:
    agent: str
    rows: list[ScenarioResult]

    @property
    def total_score(self) -> float:
        return float(sum(r.chronic_score for r in self.rows))

    @property
    def game_overs(self) -> int:
        return sum(1 for r in self.rows if r.game_over)

    @property
    def mean_score_all(self) -> float:
        return self.total_score / len(self.rows) if self.rows else 0.0

    @property
    def mean_score_alive(self) -> float:
        alive = [r.chronic_score for r in self.rows if not r.game_over]
        return float(np.mean(alive)) if alive else 0.0

    def decision_times(self, warned_only: bool = False) -> list[float]:
        out: list[float] = []
        for r in self.rows:
            out.extend(r.warned_ms if warned_only else r.decision_ms)
        return out

    def median_decision_ms(self, warned_only: bool = False) -> float:
        times = self.decision_times(warned_only)
        return statistics.median(times) if times else 0.0


def run_scenario(agent, env: Environment, chronic: Chronic,
                 logger: EpisodeLogger | None = None) -> ScenarioResult:
    name = chronic.name
    try:
        obs = env.reset(chronic)
    except Exception as exc:        # scenario faults are rows, not crashes
        return ScenarioResult(name, 0, 0.0, True, f"unusable: {exc}", 0.0)
    decision_ms: list[float] = []
    warned_ms: list[float] = []
    while not env.done:
        t0 = time.perf_counter()
        action = agent.decide(env, obs)
        dt = (time.perf_counter() - t0) * 1e3
        decision_ms.append(dt)
        if getattr(agent, "last_warned", False):
            warned_ms.append(dt)
        result = env.step(action)
        if logger is not None:
            logger.record(env.t, getattr(agent, "last_index", -1), result)
        obs = result.observation
    mean_ms = float(np.mean(decision_ms)) if decision_ms else 0.0
    return ScenarioResult(name, env.steps, env.chronic_score, env.game_over,
                          env.cause or CAUSE_COMPLETED, mean_ms, decision_ms, warned_ms)


def _eval_job(payload):
    grid, env_config, agent, chronic = payload
    env = Environment(grid, env_config)
    return run_scenario(agent, env, chronic)


def evaluate(agent, grid: GridModel, chronics: list[Chronic],
             env_config: EnvConfig | None = None, workers: int = 1,
             log_dir=None) -> EvaluationReport:
    """Run every scenario to completion or game over; deterministic rows.

    Scenario faults are recorded as dead rows, never raised. With
    ``workers`` > 1 scenarios run in separate processes (environments are
    independent value types), results keep the input order either way.
    With ``log_dir`` set, each scenario writes an episode log (one JSON
    record per step) under that directory.
    """
    env_config = env_config or EnvConfig()
    if workers > 1 and log_dir is None:
        payloads = [(grid, env_config, agent, c) for c in chronics]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_eval_job, payloads))
    else:
        from pathlib import Path
        env = Environment(grid, env_config)
        rows = []
        for c in chronics:
            if log_dir is not None:
                Path(log_dir).mkdir(parents=True, exist_ok=True)
                with open(Path(log_dir) / f"{c.name}.jsonl", "w") as fh:
                    rows.append(run_scenario(agent, env, c, EpisodeLogger(fh)))
            else:
                rows.append(run_scenario(agent, env, c))
    return EvaluationReport(getattr(agent, "name", agent.__class__.__name__), rows)


def sweep_thresholds(params: NetworkParams, space: ActionSpace, grid: GridModel,
                     chronics: list[Chronic], thresholds=TABLE_THRESHOLDS,
                     top_k: int = 10, env_config: EnvConfig | None = None,
                     workers: int = 1) -> dict[float, EvaluationReport]:
    out = {}
    for lam in thresholds:
        agent = EWAgent(params, space, EWConfig(threshold=lam, top_k=top_k))
        agent.name = f"ew@{lam}"
        out[lam] = evaluate(agent, grid, chronics, env_config, workers)
    return out


# ---------------------------------------------------------------------------
# Report emission


def write_report_csv(report: EvaluationReport, path, include_timing: bool = True) -> None:
    """Per-scenario rows; timing can be excluded for byte-reproducible output."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["scenario_id", "steps", "chronic_score", "game_over", "cause"]
        if include_timing:
            header.append("mean_decision_ms")
        w.writerow(header)
        for r in report.rows:
            row = [r.scenario, r.steps, repr(r.chronic_score), int(r.game_over), r.cause]
            if include_timing:
                row.append(f"{r.mean_decision_ms:.3f}")
            w.writerow(row)


def format_report_table(reports: list[EvaluationReport]) -> str:
    """Aligned text table with the usual comparison columns."""
    header = ("Agent", "Game Over", "Mean Score All", "Mean Score w/o Dead")
    lines = [list(header)]
    for rep in reports:
        lines.append([rep.agent, str(rep.game_overs),
                      f"{rep.mean_score_all:.2f}", f"{rep.mean_score_alive:.2f}"])
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    out = []
    for i, row in enumerate(lines):
        out.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out)
