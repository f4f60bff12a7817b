"""Command-line entry point.

Subcommands cover the whole pipeline: gen-chronics, build-actions,
gen-imitation, pretrain, train, evaluate, inspect. Every subcommand takes
an optional JSON config file whose keys mirror the relevant dataclass;
explicit flags override config values. Exit codes: 0 success, 1 usage
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import chronics as chr_mod
from .actions import ActionSpace, build_full_space, reduce_space
from .chronics import SyntheticConfig, generate_synthetic, load_chronic, load_manifest, \
    write_chronic, write_manifest
from .env import EnvConfig, Environment, observation_layout, observation_size
from .evaluation import EWAgent, EWConfig, DoNothingAgent, GreedyAgent, QAgent, \
    TABLE_THRESHOLDS, evaluate, format_report_table, sweep_thresholds, write_report_csv
from .grid import load_grid
from .imitation import ImitationDataset, PretrainConfig, export_sample_csv, \
    generate_dataset, load_dataset, pretrain, save_dataset
from .nn import NetConfig, NetworkParams, load as load_weights, save as save_weights
from .training import TrainConfig, train, write_stats


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _read_config(path) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _merged(config_cls, file_cfg: dict, overrides: dict):
    base = config_cls().to_dict()
    base.update(file_cfg)
    base.update({k: v for k, v in overrides.items() if v is not None})
    return config_cls.from_dict(base)


def _scenario_dirs(spec: str) -> list[Path]:
    p = Path(spec)
    if p.is_file():
        return load_manifest(p)
    if (p / "loads_p.csv").exists():
        return [p]
    return sorted(d for d in p.iterdir() if (d / "loads_p.csv").exists())


def _load_scenarios(spec: str, grid):
    return [load_chronic(d, grid) for d in _scenario_dirs(spec)]


def cmd_gen_chronics(args) -> int:
    grid = load_grid(args.grid)
    file_cfg = _read_config(args.config)
    profile = _read_config(args.profile) if args.profile else {}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    levels = None
    if args.level_max is not None:
        lo = args.level if args.level is not None else SyntheticConfig().load_level
        levels = np.linspace(lo, args.level_max, args.count)
    dirs = []
    for i in range(args.count):
        overrides = {
            "days": args.days, "seed": args.seed + i,
            "load_level": float(levels[i]) if levels is not None else args.level,
            "load_amplitude": args.amplitude, "load_noise": args.noise,
            "maintenance_rate": args.maintenance_rate,
            "name": f"scenario_{i:03d}",
        }
        cfg = _merged(SyntheticConfig, {**file_cfg, **profile}, overrides)
        chronic = generate_synthetic(grid, cfg)
        d = out / f"scenario_{i:03d}"
        write_chronic(chronic, d)
        dirs.append(d)
    write_manifest(dirs, out / "manifest.txt")
    print(f"wrote {len(dirs)} scenario(s) under {out}")
    return 0


def cmd_build_actions(args) -> int:
    grid = load_grid(args.grid)
    if args.budget == 0:
        space = build_full_space(grid)
        singles = [a for a in space.actions if a.kind != "combo"]
        space = ActionSpace(singles)
    else:
        scenarios = _load_scenarios(args.scenarios, grid)
        env_cfg = EnvConfig(mode=args.mode)
        space = reduce_space(grid, lambda: Environment(grid, env_cfg), scenarios,
                             budget=args.budget, states_per_chronic=args.states,
                             seed=args.seed)
    space.save(args.out)
    print(f"{len(space)} actions -> {args.out} (hash {space.manifest_hash()[:12]})")
    return 0


def cmd_gen_imitation(args) -> int:
    grid = load_grid(args.grid)
    space = ActionSpace.load(args.actions)
    scenarios = _load_scenarios(args.scenarios, grid)
    env_cfg = EnvConfig(mode=args.mode)
    dataset = generate_dataset(lambda: Environment(grid, env_cfg), scenarios,
                               args.steps, space)
    save_dataset(dataset, args.out)
    print(f"{len(dataset)} samples -> {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    grid = load_grid(args.grid)
    space = ActionSpace.load(args.actions)
    dataset = load_dataset(args.dataset, expect_manifest_hash=space.manifest_hash())
    cfg = _merged(PretrainConfig, _read_config(args.config), {
        "epochs": args.epochs, "batch_size": args.batch_size,
        "lr": args.lr, "seed": args.seed,
    })
    trunk = tuple(int(s) for s in args.trunk.split(",")) if args.trunk else (512, 256)
    net_cfg = NetConfig(input_dim=observation_size(grid), n_actions=len(space),
                        trunk=trunk, head=args.head, seed=cfg.seed)
    params = NetworkParams(net_cfg, manifest_hash=space.manifest_hash())
    params, history = pretrain(params, dataset, cfg)
    save_weights(params, args.out)
    last = history[-1]
    print(f"epoch {last['epoch']}: train {last['train_loss']:.5f} "
          f"val {last['val_loss']:.5f} -> {args.out}")
    return 0


def cmd_train(args) -> int:
    grid = load_grid(args.grid)
    space = ActionSpace.load(args.actions)
    scenarios = _load_scenarios(args.scenarios, grid)
    cfg = _merged(TrainConfig, _read_config(args.config), {
        "episodes": args.episodes, "horizon": args.horizon, "top_k": args.top_k,
        "seed": args.seed, "batch_size": args.batch_size, "lr": args.lr,
        "epsilon_greedy": True if args.epsilon_greedy else None,
        "out_dir": args.out,
    })
    if args.cold_start:
        net_cfg = NetConfig(input_dim=observation_size(grid), n_actions=len(space),
                            seed=cfg.seed)
        params = NetworkParams(net_cfg, manifest_hash=space.manifest_hash())
    else:
        params = load_weights(args.weights, expect_manifest_hash=space.manifest_hash())
    env_cfg = EnvConfig(mode=args.mode)
    params, stats = train(lambda: Environment(grid, env_cfg), params, space,
                          scenarios, cfg)
    survived = sum(1 for s in stats if s.survived_full)
    print(f"{len(stats)} episodes, {survived} full survivals -> {cfg.out_dir}/final.qw")
    return 0


def _make_agent(args, space, grid):
    if args.agent == "do-nothing":
        return DoNothingAgent()
    if args.agent == "greedy":
        return GreedyAgent(space)
    params = load_weights(args.weights, expect_manifest_hash=space.manifest_hash())
    if args.agent == "qnet":
        return QAgent(params, space, top_k=args.top_k)
    if args.agent == "ew":
        return EWAgent(params, space,
                       EWConfig(threshold=args.ew_threshold, top_k=args.top_k))
    raise ValueError(f"unknown agent {args.agent!r}")


def cmd_evaluate(args) -> int:
    grid = load_grid(args.grid)
    space = ActionSpace.load(args.actions) if args.actions else None
    scenarios = _load_scenarios(args.scenarios, grid)
    env_cfg = EnvConfig(mode=args.mode)
    if args.sweep:
        params = load_weights(args.weights, expect_manifest_hash=space.manifest_hash())
        reports = sweep_thresholds(params, space, grid, scenarios,
                                   top_k=args.top_k, env_config=env_cfg,
                                   workers=args.workers)
        print(format_report_table(list(reports.values())))
        if args.out:
            for lam, rep in reports.items():
                write_report_csv(rep, f"{args.out}.lam{lam}.csv",
                                 include_timing=not args.no_timing)
        return 0
    if args.agent in ("qnet", "ew", "greedy") and space is None:
        raise ValueError("--actions is required for this agent")
    agent = _make_agent(args, space, grid)
    report = evaluate(agent, grid, scenarios, env_cfg, workers=args.workers,
                      log_dir=args.log_dir)
    print(format_report_table([report]))
    print(f"total score {report.total_score:.2f}, "
          f"median decision {report.median_decision_ms():.1f} ms")
    if args.out:
        write_report_csv(report, args.out, include_timing=not args.no_timing)
    return 0


def cmd_inspect(args) -> int:
    if args.weights:
        params = load_weights(args.weights)
        print(f"config: {params.config.to_dict()}")
        print(f"manifest hash: {params.manifest_hash}")
        print(f"parameters: {params.n_parameters}")
    if args.actions:
        space = ActionSpace.load(args.actions)
        kinds = {}
        for a in space:
            kinds[a.kind] = kinds.get(a.kind, 0) + 1
        print(f"actions: {len(space)} ({kinds})")
        print(f"manifest hash: {space.manifest_hash()}")
    if args.layout:
        grid = load_grid(args.layout)
        offset = 0
        for name, width in observation_layout(grid):
            print(f"{offset:5d}  {name:16s} {width}")
            offset += width
        print(f"total observation length: {offset}")
    if args.dataset:
        ds = load_dataset(args.dataset)
        print(f"samples: {len(ds)}, state dim {ds.states.shape[1]}, "
              f"actions {ds.labels.shape[1]}, hash {ds.manifest_hash[:12]}")
        if args.export_sample is not None:
            out = f"sample_{args.export_sample}.csv"
            export_sample_csv(ds, args.export_sample, out)
            print(f"sample {args.export_sample} -> {out}")
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="gridtopo", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-chronics", help="generate synthetic scenarios")
    g.add_argument("--grid", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--days", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--profile", help="JSON with base_load_p / gen_voltage maps")
    g.add_argument("--config", help="JSON mirroring SyntheticConfig")
    g.add_argument("--level", type=float, default=None)
    g.add_argument("--level-max", type=float, default=None,
                   help="ramp load level linearly across scenarios")
    g.add_argument("--amplitude", type=float, default=None)
    g.add_argument("--noise", type=float, default=None)
    g.add_argument("--maintenance-rate", type=float, default=None)
    g.set_defaults(func=cmd_gen_chronics)

    b = sub.add_parser("build-actions", help="build the reduced action space")
    b.add_argument("--grid", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--budget", type=int, default=76)
    b.add_argument("--states", type=int, default=100,
                   help="sampled states per chronic for combo ranking")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--scenarios", help="manifest or directory (needed when budget > 0)")
    b.add_argument("--mode", choices=("ac", "dc"), default="ac")
    b.set_defaults(func=cmd_build_actions)

    i = sub.add_parser("gen-imitation", help="generate the supervised dataset")
    i.add_argument("--grid", required=True)
    i.add_argument("--actions", required=True)
    i.add_argument("--scenarios", required=True)
    i.add_argument("--steps", type=int, default=1000)
    i.add_argument("--out", required=True)
    i.add_argument("--mode", choices=("ac", "dc"), default="ac")
    i.set_defaults(func=cmd_gen_imitation)

    t = sub.add_parser("pretrain", help="supervised pretraining of the Q-network")
    t.add_argument("--grid", required=True)
    t.add_argument("--actions", required=True)
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--trunk", help="comma-separated trunk widths, e.g. 512,256")
    t.add_argument("--head", type=int, default=128)
    t.set_defaults(func=cmd_pretrain)

    r = sub.add_parser("train", help="guided-exploration DQN training")
    r.add_argument("--grid", required=True)
    r.add_argument("--actions", required=True)
    r.add_argument("--scenarios", required=True)
    r.add_argument("--weights", help="pretrained weights (omit with --cold-start)")
    r.add_argument("--cold-start", action="store_true")
    r.add_argument("--out", required=True)
    r.add_argument("--config")
    r.add_argument("--episodes", type=int, default=None)
    r.add_argument("--horizon", type=int, default=None)
    r.add_argument("--top-k", type=int, default=None)
    r.add_argument("--batch-size", type=int, default=None)
    r.add_argument("--lr", type=float, default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--epsilon-greedy", action="store_true")
    r.add_argument("--mode", choices=("ac", "dc"), default="ac")
    r.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="run agents over scenario sets")
    e.add_argument("--grid", required=True)
    e.add_argument("--actions")
    e.add_argument("--scenarios", required=True)
    e.add_argument("--agent", choices=("do-nothing", "greedy", "qnet", "ew"),
                   default="do-nothing")
    e.add_argument("--weights")
    e.add_argument("--ew-threshold", type=float, default=0.885)
    e.add_argument("--top-k", type=int, default=10)
    e.add_argument("--sweep", action="store_true",
                   help="evaluate the EW agent across the standard threshold grid")
    e.add_argument("--out", help="report CSV path")
    e.add_argument("--no-timing", action="store_true",
                   help="omit wall-clock columns for byte-reproducible reports")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--log-dir", help="write per-scenario episode logs here")
    e.add_argument("--mode", choices=("ac", "dc"), default="ac")
    e.set_defaults(func=cmd_evaluate)

    n = sub.add_parser("inspect", help="dump metadata of artifacts")
    n.add_argument("--weights")
    n.add_argument("--actions")
    n.add_argument("--layout", metavar="GRID",
                   help="print the observation layout of a grid")
    n.add_argument("--dataset")
    n.add_argument("--export-sample", type=int, default=None)
    n.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:
        sys.stderr.write(f"gridtopo: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
