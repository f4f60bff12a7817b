"""Build the shipped 14-bus model files (grid + synthetic-profile JSON).

Thermal limits are calibrated against the synthetic dispatch (generation
proportional to p_max): comfortable at the default calm profile, binding
on the heavy corridor once the daily multiplier climbs past ~1.25, and
generous on lines no topology action can relieve (a generator's only
feeder). Run from the repository root:

    python3 scripts/build_ieee14.py
"""

from pathlib import Path
import sys

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from gridtopo.grid import GridModel, save_grid
from gridtopo.powerflow import Injections, build_case, solve_ac

# id, from, to, r, x, total charging b (all p.u. on 100 MVA), thermal limit
BRANCHES = [
    ("01-02", 1, 2, 0.01938, 0.05917, 0.0528, 92.0),
    ("01-05", 1, 5, 0.05403, 0.22304, 0.0492, 62.0),
    ("02-03", 2, 3, 0.04699, 0.19797, 0.0438, 75.0),
    ("02-04", 2, 4, 0.05811, 0.17632, 0.0340, 55.0),
    ("02-05", 2, 5, 0.05695, 0.17388, 0.0346, 45.0),
    ("03-04", 3, 4, 0.06701, 0.17103, 0.0128, 38.0),
    ("04-05", 4, 5, 0.01335, 0.04211, 0.0, 70.0),
    ("04-07", 4, 7, 0.0, 0.20912, 0.0, 28.0),
    ("04-09", 4, 9, 0.0, 0.55618, 0.0, 20.0),
    ("05-06", 5, 6, 0.0, 0.25202, 0.0, 38.0),
    ("06-11", 6, 11, 0.09498, 0.19890, 0.0, 24.0),
    ("06-12", 6, 12, 0.12291, 0.25581, 0.0, 18.0),
    ("06-13", 6, 13, 0.06615, 0.13027, 0.0, 42.0),
    ("07-08", 7, 8, 0.0, 0.17615, 0.0, 85.0),
    ("07-09", 7, 9, 0.0, 0.11001, 0.0, 68.0),
    ("09-10", 9, 10, 0.03181, 0.08450, 0.0, 14.0),
    ("09-14", 9, 14, 0.12711, 0.27038, 0.0, 20.0),
    ("10-11", 10, 11, 0.08205, 0.19207, 0.0, 20.0),
    ("12-13", 12, 13, 0.22092, 0.19988, 0.0, 9.0),
    ("13-14", 13, 14, 0.17093, 0.34802, 0.0, 20.0),
]
LOADS = {2: (21.7, 12.7), 3: (94.2, 19.0), 4: (47.8, -3.9), 5: (7.6, 1.6),
         6: (11.2, 7.5), 9: (29.5, 16.6), 10: (9.0, 5.8), 11: (3.5, 1.8),
         12: (6.1, 1.6), 13: (13.5, 5.8), 14: (14.9, 5.0)}
GENS = {1: (332.4, 1.06), 2: (140.0, 1.045), 3: (100.0, 1.01),
        6: (100.0, 1.07), 8: (100.0, 1.09)}


def build_model() -> GridModel:
    return GridModel(
        substations=[{"id": i, "name": f"Bus {i}"} for i in range(1, 15)],
        lines=[{"id": i, "from_sub": f, "to_sub": t, "r": r, "x": x, "b": b,
                "thermal_limit": lim} for i, f, t, r, x, b, lim in BRANCHES],
        generators=[{"id": f"gen-{s}", "sub": s, "p_max": pm}
                    for s, (pm, _) in GENS.items()],
        loads=[{"id": f"load-{s:02d}", "sub": s} for s in LOADS],
        slack_sub=1,
        base_mva=100.0,
    )


def classic_injections() -> Injections:
    return Injections(
        load_p=np.array([p for p, _ in LOADS.values()]),
        load_q=np.array([q for _, q in LOADS.values()]),
        gen_p=np.array([232.4, 40.0, 0.0, 0.0, 0.0]),
        gen_v=np.array([v for _, v in GENS.values()]),
    )


def main():
    root = Path(__file__).resolve().parent.parent
    data = root / "src" / "gridtopo" / "data"
    grid = build_model()
    sol = solve_ac(build_case(grid, grid.default_topology(), classic_injections()))
    assert sol.converged, "classic base case must converge"
    save_grid(grid, data / "ieee14.json")

    profile = {
        "base_load_p": {f"load-{s:02d}": p for s, (p, _) in LOADS.items()},
        "gen_voltage": {f"gen-{s}": v for s, (_, v) in GENS.items()},
    }
    import json
    with open(data / "ieee14_profile.json", "w") as fh:
        json.dump(profile, fh, indent=1)
        fh.write("\n")
    print(f"wrote {data/'ieee14.json'} and {data/'ieee14_profile.json'}")
    print(f"base case: {sol.iterations} iterations, mismatch {sol.max_mismatch:.2e}")


if __name__ == "__main__":
    main()
