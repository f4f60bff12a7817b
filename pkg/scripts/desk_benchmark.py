"""End-to-end desk-scale pipeline on the shipped 14-bus model.

Generates a mixed calm/stressed scenario benchmark, builds the reduced
action space, runs imitation pretraining, trains guided-exploration and
epsilon-greedy agents, and prints the comparison table plus the
early-warning threshold sweep. Everything is seeded; artifacts land in
runs/desk/.

    python3 scripts/desk_benchmark.py [--episodes N] [--fast]
"""

import argparse
import json
import time
from pathlib import Path
import sys

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from gridtopo.actions import ActionSpace, reduce_space
from gridtopo.chronics import SyntheticConfig, generate_synthetic
from gridtopo.env import EnvConfig, Environment, observation_size
from gridtopo.evaluation import (DoNothingAgent, EWAgent, EWConfig, QAgent,
                                 TABLE_THRESHOLDS, evaluate, format_report_table,
                                 sweep_thresholds)
from gridtopo.grid import load_grid
from gridtopo.imitation import PretrainConfig, generate_dataset, pretrain
from gridtopo.nn import NetConfig, NetworkParams
from gridtopo.training import TrainConfig, first_full_survival, train


def benchmark_scenarios(grid, profile, n_calm=12, n_stress=12, seed0=100):
    """Half calm days, half stressed days whose peaks overload the corridor."""
    chronics = []
    for i in range(n_calm):
        cfg = SyntheticConfig(days=1, seed=seed0 + i, load_level=0.88,
                              load_amplitude=0.20, load_noise=0.01,
                              name=f"calm_{i:02d}", **profile)
        chronics.append(generate_synthetic(grid, cfg))
    for i in range(n_stress):
        level = 1.04 + 0.006 * (i % 6)
        cfg = SyntheticConfig(days=1, seed=seed0 + 50 + i, load_level=level,
                              load_amplitude=0.29, load_noise=0.01,
                              name=f"stress_{i:02d}", **profile)
        chronics.append(generate_synthetic(grid, cfg))
    return chronics


def training_scenarios(grid, profile, n=16, seed0=300):
    """Same distribution as the benchmark, disjoint seeds."""
    chronics = []
    for i in range(n):
        level = 0.9 if i % 2 == 0 else (1.04 + 0.01 * ((i // 2) % 4))
        amp = 0.2 if i % 2 == 0 else 0.29
        cfg = SyntheticConfig(days=1, seed=seed0 + i, load_level=level,
                              load_amplitude=amp, load_noise=0.01,
                              name=f"train_{i:02d}", **profile)
        chronics.append(generate_synthetic(grid, cfg))
    return chronics


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--episodes", type=int, default=48)
    ap.add_argument("--top-k", type=int, default=8)
    ap.add_argument("--combo-budget", type=int, default=16)
    ap.add_argument("--imitation-steps", type=int, default=120)
    ap.add_argument("--fast", action="store_true", help="skip the threshold sweep")
    args = ap.parse_args()

    grid = load_grid(ROOT / "src" / "gridtopo" / "data" / "ieee14.json")
    profile_doc = json.load(open(ROOT / "src" / "gridtopo" / "data" / "ieee14_profile.json"))
    profile = {"base_load_p": profile_doc["base_load_p"],
               "gen_voltage": profile_doc["gen_voltage"]}
    out = ROOT / "runs" / "desk"
    out.mkdir(parents=True, exist_ok=True)
    env_cfg = EnvConfig(count_out_lines=False)
    factory = lambda: Environment(grid, env_cfg)

    t0 = time.time()
    print("== scenarios ==")
    bench = benchmark_scenarios(grid, profile)
    train_set = training_scenarios(grid, profile)
    print(f"{len(bench)} benchmark + {len(train_set)} training days "
          f"({time.time()-t0:.1f}s)")

    print("== action space ==")
    t = time.time()
    rank_chronics = training_scenarios(grid, profile, n=2, seed0=900)
    space = reduce_space(grid, factory, rank_chronics, budget=args.combo_budget,
                         states_per_chronic=3, seed=0)
    space.save(out / "actions.json")
    print(f"{len(space)} actions ({time.time()-t:.1f}s)")

    print("== imitation ==")
    t = time.time()
    imit_chronics = training_scenarios(grid, profile, n=3, seed0=700)
    dataset = generate_dataset(factory, imit_chronics, args.imitation_steps, space)
    net_cfg = NetConfig(input_dim=observation_size(grid), n_actions=len(space),
                        trunk=(128, 64), head=64, seed=1)
    params = NetworkParams(net_cfg, manifest_hash=space.manifest_hash())
    params, history = pretrain(params, dataset, PretrainConfig(
        epochs=30, batch_size=16, lr=1e-3, val_fraction=0.1, head_count=10, seed=2))
    print(f"{len(dataset)} samples, val loss {history[-1]['val_loss']:.4f} "
          f"(epoch1 {history[0]['val_loss']:.4f}) ({time.time()-t:.1f}s)")

    print("== guided training ==")
    t = time.time()
    tcfg = TrainConfig(episodes=args.episodes, horizon=288, top_k=args.top_k,
                       batch_size=32, update_period=4, target_period=150,
                       discount=0.95, lr=1e-4, buffer_capacity=50_000,
                       min_buffer=200, terminal_copies=4, seed=3,
                       out_dir=str(out / "guided"))
    guided_params, guided_stats = train(factory, params.copy(), space, train_set, tcfg)
    g_first = first_full_survival(guided_stats)
    g_survived = sum(1 for s in guided_stats if s.survived_full)
    print(f"guided: {g_survived}/{len(guided_stats)} full survivals, "
          f"first at ep {g_first} ({time.time()-t:.1f}s)")

    print("== epsilon-greedy baseline ==")
    t = time.time()
    ecfg = TrainConfig(**{**tcfg.to_dict(), "epsilon_greedy": True,
                          "out_dir": str(out / "eps")})
    eps_params, eps_stats = train(factory, params.copy(), space, train_set, ecfg)
    e_first = first_full_survival(eps_stats)
    e_survived = sum(1 for s in eps_stats if s.survived_full)
    print(f"eps-greedy: {e_survived}/{len(eps_stats)} full survivals, "
          f"first at ep {e_first} ({time.time()-t:.1f}s)")

    print("== evaluation ==")
    t = time.time()
    reports = []
    reports.append(evaluate(DoNothingAgent(), grid, bench, env_cfg))
    agent = QAgent(guided_params, space, top_k=args.top_k)
    agent.name = "guided-trained"
    reports.append(evaluate(agent, grid, bench, env_cfg))
    ew = EWAgent(guided_params, space, EWConfig(threshold=0.885, top_k=args.top_k))
    ew.name = "ew@0.885"
    reports.append(evaluate(ew, grid, bench, env_cfg))
    print(format_report_table(reports))
    print(f"median EW decision on warned steps: "
          f"{reports[2].median_decision_ms(warned_only=True):.1f} ms "
          f"({time.time()-t:.1f}s)")

    if not args.fast:
        print("== threshold sweep ==")
        t = time.time()
        sweep = sweep_thresholds(guided_params, space, grid, bench,
                                 top_k=args.top_k, env_config=env_cfg)
        print(format_report_table(list(sweep.values())))
        zero = [lam for lam, rep in sweep.items() if rep.game_overs == 0]
        print(f"thresholds with zero game-overs: {zero} ({time.time()-t:.1f}s)")

    print(f"total {time.time()-t0:.1f}s")


if __name__ == "__main__":
    main()
