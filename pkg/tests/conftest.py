import json
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pytest

from gridtopo.chronics import Chronic
from gridtopo.grid import GridModel, load_grid

DATA = Path(__file__).resolve().parent.parent / "src" / "gridtopo" / "data"


@pytest.fixture(scope="session")
def ieee14() -> GridModel:
    return load_grid(DATA / "ieee14.json")


@pytest.fixture(scope="session")
def ieee14_profile() -> dict:
    with open(DATA / "ieee14_profile.json") as fh:
        return json.load(fh)


def make_grid(lines, gens, loads, slack=1, base_mva=100.0, n_subs=None) -> GridModel:
    """Small fixture grids from terse tuples.

    lines: (id, from, to, x, limit) or (id, from, to, r, x, b, limit)
    gens:  (id, sub, p_max);  loads: (id, sub)
    """
    subs = n_subs or max(max(l[1], l[2]) for l in lines)
    norm_lines = []
    for l in lines:
        if len(l) == 5:
            lid, f, t, x, lim = l
            norm_lines.append({"id": lid, "from_sub": f, "to_sub": t,
                               "r": 0.0, "x": x, "b": 0.0, "thermal_limit": lim})
        else:
            lid, f, t, r, x, b, lim = l
            norm_lines.append({"id": lid, "from_sub": f, "to_sub": t,
                               "r": r, "x": x, "b": b, "thermal_limit": lim})
    return GridModel(
        substations=[{"id": i, "name": f"S{i}"} for i in range(1, subs + 1)],
        lines=norm_lines,
        generators=[{"id": g[0], "sub": g[1], "p_max": g[2]} for g in gens],
        loads=[{"id": d[0], "sub": d[1]} for d in loads],
        slack_sub=slack,
        base_mva=base_mva,
    )


def make_chronic(grid: GridModel, load_p, gen_p=None, gen_v=1.0, steps=24,
                 maintenance=(), load_q=None, start="2026-06-01T00:00") -> Chronic:
    """Constant-injection chronic; per-step overrides via 2-D arrays."""
    n_load, n_gen = grid.n_load, grid.n_gen
    lp = np.asarray(load_p, dtype=float)
    if lp.ndim == 1:
        lp = np.tile(lp, (steps, 1))
    steps = lp.shape[0]
    lq = np.asarray(load_q, dtype=float) if load_q is not None else lp * 0.2
    if lq.ndim == 1:
        lq = np.tile(lq, (steps, 1))
    if gen_p is None:
        share = grid.gen_p_max / grid.gen_p_max.sum()
        gp = lp.sum(axis=1)[:, None] * share[None, :]
    else:
        gp = np.asarray(gen_p, dtype=float)
        if gp.ndim == 1:
            gp = np.tile(gp, (steps, 1))
    gv = np.full((steps, n_gen), gen_v, dtype=float) if np.isscalar(gen_v) \
        else np.tile(np.asarray(gen_v, dtype=float), (steps, 1))
    t0 = datetime.fromisoformat(start)
    return Chronic(
        load_ids=[l.id for l in grid.loads],
        gen_ids=[g.id for g in grid.generators],
        load_p=lp, load_q=lq, prod_p=gp, prod_v=gv,
        maintenance=list(maintenance),
        timestamps=[t0 + timedelta(minutes=5 * i) for i in range(steps)],
        name="fixture",
    )


@pytest.fixture
def pair_grid() -> GridModel:
    """Two substations joined by parallel lines; exact DC flow control."""
    return make_grid(
        lines=[("A", 1, 2, 0.1, 100.0), ("B", 1, 2, 0.1, 100.0)],
        gens=[("g1", 1, 500.0)],
        loads=[("d2", 2)],
    )


@pytest.fixture
def mesh_grid() -> GridModel:
    """Meshed four-sub core plus a leaf substation behind one feeder."""
    return make_grid(
        lines=[("a", 1, 2, 0.10, 100.0), ("b", 2, 3, 0.10, 100.0),
               ("c", 3, 4, 0.10, 100.0), ("d", 1, 4, 0.10, 100.0),
               ("e", 2, 4, 0.15, 100.0), ("f", 4, 5, 0.10, 100.0)],
        gens=[("g1", 1, 300.0), ("g3", 3, 100.0)],
        loads=[("d2", 2), ("d4", 4), ("d5", 5)],
    )
