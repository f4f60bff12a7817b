"""Guided-exploration DQN training with a target network and prioritized replay.

Each step the agent ranks actions by Q, simulates the ``top_k`` best legal
candidates, and plays the one with the best predicted outcome; the
realized transition (not the prediction) is what enters the buffer. An
epsilon-greedy mode ships as the comparison baseline; everything else is
identical between the two so training curves are directly comparable.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from .actions import ActionSpace, is_legal
from .env import Environment, ScenarioUnusable, StepResult
from .nn import NetworkParams, adam_init, adam_step, copy_weights, forward, save, td_loss_grad
from .replay import Experience, PrioritizedBuffer


@dataclass
class TrainConfig:
    episodes: int = 10_000
    horizon: int = 288
    top_k: int = 10                     # guided-exploration width
    batch_size: int = 32
    update_period: int = 4              # environment steps per network update
    target_period: int = 1_000          # updates per hard target copy
    discount: float = 0.95
    lr: float = 1e-4
    buffer_capacity: int = 100_000
    priority_exponent: float = 0.6
    weight_exponent_start: float = 0.4
    weight_exponent_end: float = 1.0
    weight_anneal_steps: int = 100_000
    priority_floor: float = 1e-3
    terminal_copies: int = 4
    min_buffer: int = 200
    target_mode: str = "literal"        # bootstrap under the target net; "ddqn" decouples argmax
    epsilon_greedy: bool = False        # baseline exploration instead of guided
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_fraction: float = 0.5       # fraction of episodes to anneal over
    seed: int = 0
    checkpoint_every: int = 0           # episodes between checkpoints; 0 = final only
    out_dir: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**d)


@dataclass
class EpisodeStats:
    episode: int
    scenario: str
    steps: int
    reward_sum: float
    score_sum: float
    cause: str
    survived_full: bool
    wall_ms: float


def write_stats(stats: list[EpisodeStats], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "steps", "reward_sum", "score_sum", "cause", "ms"])
        for s in stats:
            w.writerow([s.episode, s.steps, repr(s.reward_sum), repr(s.score_sum),
                        s.cause, f"{s.wall_ms:.3f}"])


def first_full_survival(stats: list[EpisodeStats]) -> int | None:
    for s in stats:
        if s.survived_full:
            return s.episode
    return None


def guided_select(params: NetworkParams, env: Environment, space: ActionSpace,
                  observation: np.ndarray, top_k: int,
                  key: str = "reward") -> tuple[int, StepResult | None]:
    """Simulate the ``top_k`` highest-Q legal actions, play the best outcome.

    Candidates predicting survival beat any candidate predicting game
    over; among equals the higher key wins, then the lower action index.
    Falls back to do-nothing when every candidate is illegal.
    """
    q = forward(params, observation[None, :], "infer")[0]
    ranked = np.argsort(-q, kind="stable")[:top_k]
    best = None          # (alive, key value, -action index, action index, result)
    for ai in ranked:
        ai = int(ai)
        if not is_legal(env, space[ai]).legal:
            continue
        result = env.simulate(space[ai])
        value = result.reward if key == "reward" else result.info.step_score
        cand = (not result.done or result.info.cause == "completed", value, -ai)
        if best is None or cand > best[0]:
            best = (cand, ai, result)
    if best is None:
        return 0, env.simulate(space[0])
    return best[1], best[2]


def td_targets(rewards: np.ndarray, next_states: np.ndarray, dones: np.ndarray,
               target: NetworkParams, main: NetworkParams, discount: float,
               mode: str = "literal") -> np.ndarray:
    """Bootstrapped targets: r when terminal, else r + discount * Q-next.

    ``literal`` takes the max under the target network; ``ddqn`` picks the
    argmax under the main network and evaluates it under the target one.
    """
    rewards = np.asarray(rewards, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    if discount == 0.0 or np.all(dones):
        return rewards.copy()
    q_next = forward(target, next_states, "infer")
    if mode == "ddqn":
        picks = np.argmax(forward(main, next_states, "infer"), axis=1)
        boot = q_next[np.arange(len(q_next)), picks]
    else:
        boot = np.max(q_next, axis=1)
    return rewards + np.where(dones, 0.0, discount * boot)


def _epsilon(cfg: TrainConfig, episode: int) -> float:
    span = max(int(cfg.episodes * cfg.epsilon_fraction), 1)
    frac = min(episode / span, 1.0)
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


def train(env_factory, params: NetworkParams, space: ActionSpace,
          chronics: list, config: TrainConfig):
    """Run the training loop; returns (params, per-episode stats).

    Scenarios cycle in a seeded shuffled order, reshuffled every pass.
    Unusable scenarios are skipped with a stats row so episode indices
    stay aligned across runs.
    """
    cfg = config
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    order_rng = np.random.default_rng(seeds[0])
    eps_rng = np.random.default_rng(seeds[1])
    buffer = PrioritizedBuffer(
        capacity=cfg.buffer_capacity, alpha=cfg.priority_exponent,
        beta_start=cfg.weight_exponent_start, beta_end=cfg.weight_exponent_end,
        beta_steps=cfg.weight_anneal_steps, floor=cfg.priority_floor,
        terminal_copies=cfg.terminal_copies,
        seed=int(seeds[2].generate_state(1)[0]))
    target = params.copy()
    opt = adam_init(params, cfg.lr)
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    stats: list[EpisodeStats] = []
    env_steps = 0
    updates = 0
    schedule: list[int] = []
    for episode in range(1, cfg.episodes + 1):
        if not schedule:
            schedule = list(order_rng.permutation(len(chronics)))
        chronic = chronics[schedule.pop()]
        env: Environment = env_factory()
        started = time.perf_counter()
        try:
            obs = env.reset(chronic)
        except ScenarioUnusable as exc:
            stats.append(EpisodeStats(episode, getattr(chronic, "name", "?"), 0,
                                      0.0, 0.0, f"unusable: {exc}", False, 0.0))
            continue

        for _ in range(cfg.horizon):
            if env.done:
                break
            if cfg.epsilon_greedy:
                if eps_rng.uniform() < _epsilon(cfg, episode):
                    action_idx = int(eps_rng.integers(len(space)))
                else:
                    q = forward(params, obs[None, :], "infer")[0]
                    action_idx = int(np.argmax(q))
            else:
                action_idx, _ = guided_select(params, env, space, obs, cfg.top_k)
            result = env.step(space[action_idx])
            buffer.push(Experience(obs, action_idx, result.reward,
                                   result.observation, result.done))
            obs = result.observation
            env_steps += 1

            if env_steps % cfg.update_period == 0 and len(buffer) >= max(cfg.batch_size,
                                                                         cfg.min_buffer):
                items, handles, weights = buffer.sample(cfg.batch_size)
                states = np.stack([e.state for e in items])
                nexts = np.stack([e.next_state for e in items])
                acts = np.array([e.action for e in items], dtype=np.intp)
                rews = np.array([e.reward for e in items])
                dones = np.array([e.done for e in items], dtype=bool)
                y = td_targets(rews, nexts, dones, target, params, cfg.discount,
                               cfg.target_mode)
                _, grads, residual = td_loss_grad(params, states, acts, y, weights)
                adam_step(params, grads, opt)
                buffer.update_priorities(handles, residual)
                updates += 1
                if updates % cfg.target_period == 0:
                    copy_weights(params, target)

        wall = (time.perf_counter() - started) * 1e3
        stats.append(EpisodeStats(episode, env.chronic.name, env.steps,
                                  env.reward_sum, env.chronic_score,
                                  env.cause or "completed", not env.game_over, wall))
        if out_dir and cfg.checkpoint_every and episode % cfg.checkpoint_every == 0:
            save(params, out_dir / f"ckpt_ep{episode:05d}.qw")
    if out_dir:
        save(params, out_dir / "final.qw")
        write_stats(stats, out_dir / "training_stats.csv")
    return params, stats
