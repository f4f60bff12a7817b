"""Grid-operation MDP: step semantics, constraint enforcement, scoring.

Step pipeline, in order: legality check (illegal actions downgrade to
do-nothing and are flagged), action application, timer decrements,
scheduled maintenance, cursor advance, power-flow solve, overload rules
with a single post-trip re-solve, hard-constraint checks, then reward and
score accounting.

Hard constraints end the episode: solver divergence, any unserved load,
more than one disconnected plant, or an electrical island. A single
stranded generator is tolerated (a tripped plant, not an island); the
overload rules are the only soft constraints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import IO

import numpy as np

from .actions import DO_NOTHING, Action, apply_action, is_legal
from .chronics import Chronic, forecast_at, injections_at
from .grid import GridModel, TopologyState, connectivity_check, electrical_nodes
from .powerflow import Injections, PowerFlowSolution, build_case, line_loading, solve_ac, solve_dc

CAUSE_DIVERGENCE = "divergence"
CAUSE_LOAD = "load_disconnected"
CAUSE_PLANTS = "plant_tripped"
CAUSE_ISLAND = "islanded"
CAUSE_COMPLETED = "completed"


class ScenarioUnusable(RuntimeError):
    """The chronic cannot even start (step-0 divergence)."""


@dataclass
class EnvConfig:
    mode: str = "ac"                    # "ac" or "dc"
    tol: float = 1e-8
    max_iter: int = 20
    cooldown_steps: int = 3             # 15 min at 5 min per step
    trip_recovery_steps: int = 10       # 50 min
    overload_grace_steps: int = 2       # consecutive steps tolerated at 1.0 <= rho < 1.5
    instant_trip_loading: float = 1.5
    forecast_sigma: float = 0.0
    count_out_lines: bool = True        # out-of-service lines score their full per-line term
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "EnvConfig":
        return EnvConfig(**d)


@dataclass
class StepInfo:
    step_score: float
    tripped_lines: list[str]
    violated: list[str]
    action_legal: bool
    legality_reason: str
    predicted: bool
    cause: str


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: StepInfo


def line_score_terms(loadings: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 1.0 - loadings ** 2)


def step_score_value(loadings: np.ndarray, in_service: np.ndarray,
                     count_out_lines: bool = True) -> float:
    """Sum over lines of max(0, 1 - loading^2); out lines load zero.

    Taken literally, a disconnected line earns its full per-line term.
    With ``count_out_lines`` off, disconnected lines earn nothing instead,
    which removes the free-points incentive to switch loaded lines out.
    """
    terms = line_score_terms(loadings)
    if not count_out_lines:
        terms = terms * in_service
    return float(np.sum(terms))


def reward_value(loadings: np.ndarray, in_service: np.ndarray,
                 count_out_lines: bool = True, game_over: bool = False) -> float:
    """Mean per-line margin in [-1, 1]; -1 on game over.

    The denominator is always the total line count, so the flag only
    decides whether disconnected lines contribute their full term or zero.
    """
    if game_over:
        return -1.0
    terms = line_score_terms(loadings)
    if not count_out_lines:
        terms = terms * in_service
    return float(np.sum(terms) / len(loadings))


def observation_layout(grid: GridModel) -> list[tuple[str, int]]:
    """Ordered (block name, width) pairs of the flattened feature vector."""
    n_slots = int(np.sum(grid.slot_counts))
    return [
        ("gen_p", grid.n_gen),
        ("gen_v_setpoint", grid.n_gen),
        ("load_p", grid.n_load),
        ("load_q", grid.n_load),
        ("line_status", grid.n_line),
        ("p_from", grid.n_line),
        ("p_to", grid.n_line),
        ("q_from", grid.n_line),
        ("q_to", grid.n_line),
        ("i_from", grid.n_line),
        ("i_to", grid.n_line),
        ("loading", grid.n_line),
        ("thermal_limit", grid.n_line),
        ("bus_assignment", n_slots),
        ("line_cooldown", grid.n_line),
        ("sub_cooldown", grid.n_sub),
        ("recovery_timer", grid.n_line),
        ("calendar", 8),
    ]


def observation_size(grid: GridModel) -> int:
    return sum(w for _, w in observation_layout(grid))


@dataclass
class EnvSnapshot:
    t: int
    topology: TopologyState
    solution: PowerFlowSolution | None
    case: object
    game_over: bool
    cause: str
    steps: int
    chronic_score: float
    reward_sum: float
    tripped_plants: int


class Environment:
    """One playable scenario over a fixed grid. Single-threaded by design;
    copies are cheap and independent, which is what simulate() relies on."""

    def __init__(self, grid: GridModel, config: EnvConfig | None = None):
        self.grid = grid
        self.config = config or EnvConfig()
        self.chronic: Chronic | None = None
        self._maint_by_line: dict[int, list] = {}
        self.t = 0
        self.topology = grid.default_topology()
        self.solution: PowerFlowSolution | None = None
        self._case = None
        self.game_over = False
        self.cause = ""
        self.steps = 0
        self.chronic_score = 0.0
        self.reward_sum = 0.0
        self.tripped_plants = 0
        self._obs = None

    # -- lifecycle -----------------------------------------------------

    def reset(self, chronic: Chronic) -> np.ndarray:
        chronic = chronic.align(self.grid)
        chronic.validate_against(self.grid)
        self.chronic = chronic
        self._maint_by_line = {}
        for ev in chronic.maintenance:
            li = self.grid.line_pos[ev.line_id]
            self._maint_by_line.setdefault(li, []).append(ev)
        self.t = 0
        self.topology = self.grid.default_topology()
        self.game_over = False
        self.cause = ""
        self.steps = 0
        self.chronic_score = 0.0
        self.reward_sum = 0.0
        self.tripped_plants = 0
        sol, case = self._solve(injections_at(chronic, 0), warm=None)
        if not sol.converged:
            raise ScenarioUnusable(f"chronic {chronic.name!r}: power flow diverges at step 0")
        self.solution, self._case = sol, case
        self._obs = self._build_observation()
        return self._obs

    @property
    def done(self) -> bool:
        return self.game_over or (self.chronic is not None and self.t >= self.chronic.n_steps - 1)

    def maintenance_active(self, line_index: int, t: int) -> bool:
        return any(ev.start_step <= t < ev.end_step
                   for ev in self._maint_by_line.get(line_index, ()))

    def snapshot(self) -> EnvSnapshot:
        return EnvSnapshot(self.t, self.topology.copy(), self.solution, self._case,
                           self.game_over, self.cause, self.steps,
                           self.chronic_score, self.reward_sum, self.tripped_plants)

    def restore(self, snap: EnvSnapshot) -> None:
        self.t = snap.t
        self.topology = snap.topology.copy()
        self.solution = snap.solution
        self._case = snap.case
        self.game_over = snap.game_over
        self.cause = snap.cause
        self.steps = snap.steps
        self.chronic_score = snap.chronic_score
        self.reward_sum = snap.reward_sum
        self.tripped_plants = snap.tripped_plants
        self._obs = None

    def copy(self) -> "Environment":
        other = Environment(self.grid, self.config)
        other.chronic = self.chronic
        other._maint_by_line = self._maint_by_line
        other.restore(self.snapshot())
        other._obs = self._obs
        return other

    # -- core transitions ----------------------------------------------

    def step(self, action: Action) -> StepResult:
        if self.chronic is None:
            raise RuntimeError("reset() before step()")
        if self.done:
            raise RuntimeError("stepping a finished environment")
        inj = injections_at(self.chronic, self.t + 1)
        return self._advance(action, inj, predicted=False)

    def simulate(self, action: Action) -> StepResult:
        """Run the full step pipeline on a copy, with forecast injections."""
        if self.chronic is None:
            raise RuntimeError("reset() before simulate()")
        if self.done:
            raise RuntimeError("simulating from a finished environment")
        inj = forecast_at(self.chronic, self.t + 1,
                          sigma=self.config.forecast_sigma, seed=self.config.seed)
        return self.copy()._advance(action, inj, predicted=True)

    def _advance(self, action: Action, inj: Injections, predicted: bool) -> StepResult:
        grid, cfg = self.grid, self.config

        # 1. legality
        verdict = is_legal(self, action)
        applied = action if verdict.legal else DO_NOTHING

        # 2. apply action, run timers, then scheduled maintenance
        topo = apply_action(grid, self.topology, applied, cfg.cooldown_steps)
        np.maximum(topo.line_cooldown - 1, 0, out=topo.line_cooldown)
        np.maximum(topo.sub_cooldown - 1, 0, out=topo.sub_cooldown)
        np.maximum(topo.recovery_timer - 1, 0, out=topo.recovery_timer)
        t_new = self.t + 1
        for li, events in self._maint_by_line.items():
            for ev in events:
                if ev.start_step == t_new:
                    topo.line_in_service[li] = False
                    topo.recovery_timer[li] = max(int(topo.recovery_timer[li]), ev.duration_steps)
                    topo.overload_grace[li] = 0
                elif ev.end_step == t_new and not topo.line_in_service[li] \
                        and topo.recovery_timer[li] == 0:
                    topo.line_in_service[li] = True

        # 3. advance and solve
        self.topology = topo
        self.t = t_new
        sol, case = self._solve(inj, warm=self.solution)

        tripped: list[str] = []
        if not sol.converged:
            return self._finish_dead(CAUSE_DIVERGENCE, verdict, tripped, predicted)

        # 5. overload rules on the loading vector, single simultaneous re-solve
        loadings = line_loading(sol, grid)
        for li in range(grid.n_line):
            if not topo.line_in_service[li]:
                continue
            rho = loadings[li]
            if rho >= cfg.instant_trip_loading:
                tripped.append(li)
            elif rho >= 1.0:
                topo.overload_grace[li] += 1
                if topo.overload_grace[li] > cfg.overload_grace_steps:
                    tripped.append(li)
            else:
                topo.overload_grace[li] = 0
        for li in tripped:
            topo.line_in_service[li] = False
            topo.recovery_timer[li] = cfg.trip_recovery_steps
            topo.overload_grace[li] = 0
        tripped = [grid.lines[li].id for li in tripped]
        if tripped:
            sol, case = self._solve(inj, warm=sol)
            if not sol.converged:
                return self._finish_dead(CAUSE_DIVERGENCE, verdict, tripped, predicted)

        # 6. hard constraints
        cause = self._hard_constraint_violation()
        if cause:
            return self._finish_dead(cause, verdict, tripped, predicted)

        # 7. scoring
        self.solution, self._case = sol, case
        self.steps += 1
        loadings = line_loading(sol, grid)
        score = step_score_value(loadings, topo.line_in_service, cfg.count_out_lines)
        rew = reward_value(loadings, topo.line_in_service, cfg.count_out_lines)
        self.chronic_score += score
        self.reward_sum += rew
        done = self.t >= self.chronic.n_steps - 1
        self._obs = self._build_observation()
        info = StepInfo(score, tripped, [], verdict.legal, verdict.reason,
                        predicted, CAUSE_COMPLETED if done else "")
        return StepResult(self._obs, rew, done, info)

    def _finish_dead(self, cause: str, verdict, tripped: list, predicted: bool) -> StepResult:
        self.game_over = True
        self.cause = cause
        self.chronic_score = 0.0
        self.reward_sum += -1.0
        obs = self._obs if self._obs is not None else np.zeros(observation_size(self.grid))
        info = StepInfo(0.0, tripped, [cause], verdict.legal, verdict.reason, predicted, cause)
        return StepResult(obs, -1.0, True, info)

    def _hard_constraint_violation(self) -> str:
        grid, topo = self.grid, self.topology
        nodes = electrical_nodes(grid, topo)
        conn = connectivity_check(grid, topo, nodes)
        slack_gi = min((gi for gi in range(grid.n_gen) if grid.gen_sub[gi] == grid.slack_sub_pos),
                       key=lambda gi: grid.generators[gi].id)
        main = conn.component_of[nodes.gen_node[slack_gi]]

        off_main = conn.component_of != main
        if np.any(off_main[nodes.load_node]):
            return CAUSE_LOAD
        self.tripped_plants = int(np.sum(off_main[nodes.gen_node]))
        if self.tripped_plants > 1:
            return CAUSE_PLANTS
        if conn.component_count > 1:
            # Components beyond a lone dead generator bar are genuine islands.
            has_line = np.zeros(nodes.n_nodes, dtype=bool)
            live = nodes.line_nodes[nodes.line_nodes[:, 0] >= 0]
            has_line[live.ravel()] = True
            if np.any(has_line & off_main):
                return CAUSE_ISLAND
        return ""

    def _solve(self, inj: Injections, warm: PowerFlowSolution | None):
        case = build_case(self.grid, self.topology, inj)
        if self.config.mode == "dc":
            return solve_dc(case), case
        return solve_ac(case, tol=self.config.tol, max_iter=self.config.max_iter,
                        start=warm), case

    # -- observation ---------------------------------------------------

    def observation(self) -> np.ndarray:
        if self._obs is None:
            self._obs = self._build_observation()
        return self._obs

    def _realized_gen_p(self, inj: Injections) -> np.ndarray:
        grid = self.grid
        nodes = electrical_nodes(grid, self.topology)
        conn = connectivity_check(grid, self.topology, nodes)
        slack_gi = min((gi for gi in range(grid.n_gen) if grid.gen_sub[gi] == grid.slack_sub_pos),
                       key=lambda gi: grid.generators[gi].id)
        slack_node = int(nodes.gen_node[slack_gi])
        main = conn.component_of[slack_node]

        realized = inj.gen_p.copy()
        realized[conn.component_of[nodes.gen_node] != main] = 0.0

        case, sol = self._case, self.solution
        key = nodes.keys[slack_node]
        try:
            ci = case.node_keys.index(key)
        except ValueError:
            return realized
        v = sol.vm * np.exp(1j * sol.va)
        p_node = float((v * np.conj(case.ybus @ v)).real[ci]) * grid.base_mva
        loads_here = float(np.sum(inj.load_p[nodes.load_node == slack_node]))
        slack_gens = np.flatnonzero(nodes.gen_node == slack_node)
        weights = grid.gen_p_max[slack_gens]
        realized[slack_gens] = (p_node + loads_here) * weights / np.sum(weights)
        return realized

    def _build_observation(self) -> np.ndarray:
        grid, topo, sol = self.grid, self.topology, self.solution
        inj = injections_at(self.chronic, self.t)
        loadings = line_loading(sol, grid)
        ts = self.chronic.timestamps[self.t]

        def cyc(value, period):
            ang = 2.0 * math.pi * value / period
            return [math.sin(ang), math.cos(ang)]

        parts = [
            self._realized_gen_p(inj),
            inj.gen_v,
            inj.load_p,
            inj.load_q,
            topo.line_in_service.astype(float),
            sol.p_from, sol.p_to, sol.q_from, sol.q_to, sol.i_from, sol.i_to,
            loadings,
            grid.thermal_limits,
            np.concatenate([a.astype(float) - 1.0 for a in topo.bus_assignment]),
            topo.line_cooldown.astype(float),
            topo.sub_cooldown.astype(float),
            topo.recovery_timer.astype(float),
            np.array(cyc(ts.month - 1, 12) + cyc(ts.weekday(), 7)
                     + cyc(ts.hour, 24) + cyc(ts.minute, 60)),
        ]
        return np.concatenate(parts)


class EpisodeLogger:
    """Newline-delimited JSON records of played steps, for offline analysis."""

    def __init__(self, stream: IO[str]):
        self.stream = stream

    def record(self, t: int, action_index: int, result: StepResult) -> None:
        self.stream.write(json.dumps({
            "t": t,
            "action": action_index,
            "reward": result.reward,
            "step_score": result.info.step_score,
            "trips": result.info.tripped_lines,
            "cause": result.info.cause,
        }) + "\n")
