"""Discrete topology actions: enumeration, spaces, legality, application.

An action is one of: do-nothing, a line switch (toggle service status),
a node split (replace one substation's full bus-bar assignment vector),
or a combo of one node part and one line part. Rejoining a substation is
the node action whose assignment puts every slot back on bus-bar 1.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .grid import GridFormatError, GridModel, TopologyState, connectivity_check, electrical_nodes

COOLDOWN_STEPS = 3          # 15 minutes at 5 minutes per step


@dataclass(frozen=True)
class Action:
    sub_id: int | None = None
    assignment: tuple[int, ...] | None = None
    line_id: str | None = None

    def __post_init__(self):
        if (self.sub_id is None) != (self.assignment is None):
            raise ValueError("node part needs both sub_id and assignment")

    @property
    def kind(self) -> str:
        if self.sub_id is not None and self.line_id is not None:
            return "combo"
        if self.sub_id is not None:
            return "node_split"
        if self.line_id is not None:
            return "line_switch"
        return "do_nothing"

    def to_dict(self) -> dict:
        out: dict = {}
        if self.sub_id is not None:
            out["sub"] = self.sub_id
            out["assignment"] = list(self.assignment)
        if self.line_id is not None:
            out["line"] = self.line_id
        return out

    @staticmethod
    def from_dict(d: dict) -> "Action":
        return Action(
            sub_id=d.get("sub"),
            assignment=tuple(d["assignment"]) if "assignment" in d else None,
            line_id=d.get("line"),
        )


DO_NOTHING = Action()


def apply_action(grid: GridModel, topology: TopologyState, action: Action,
                 cooldown_steps: int = COOLDOWN_STEPS) -> TopologyState:
    """Apply an already-validated action, returning a new topology.

    Every touched line and substation gets its cooldown timer set to
    ``cooldown_steps``. Unknown element ids signal a corrupted action
    space and raise.
    """
    new = topology.copy()
    if action.line_id is not None:
        if action.line_id not in grid.line_pos:
            raise GridFormatError(f"action references unknown line {action.line_id!r}")
        li = grid.line_pos[action.line_id]
        new.line_in_service[li] = not new.line_in_service[li]
        new.line_cooldown[li] = cooldown_steps
        if new.line_in_service[li]:
            new.recovery_timer[li] = 0
            new.overload_grace[li] = 0
    if action.sub_id is not None:
        if action.sub_id not in grid.sub_pos:
            raise GridFormatError(f"action references unknown substation {action.sub_id!r}")
        si = grid.sub_pos[action.sub_id]
        if len(action.assignment) != grid.slot_counts[si]:
            raise GridFormatError(
                f"assignment arity {len(action.assignment)} != {grid.slot_counts[si]} "
                f"slots at substation {action.sub_id}")
        if any(v not in (1, 2) for v in action.assignment):
            raise GridFormatError("assignment entries must be 1 or 2")
        new.bus_assignment[si] = np.array(action.assignment, dtype=np.int8)
        new.sub_cooldown[si] = cooldown_steps
    return new


def enumerate_node_actions(grid: GridModel) -> list[Action]:
    """All nontrivial bus-bar assignments, slot 0 pinned to bar 1.

    Pinning the first slot removes the bar-1/bar-2 mirror symmetry; the
    all-on-one-bar configuration is skipped because it is the identity.
    No feasibility filtering happens here; space construction and runtime
    legality checks reject the configurations that would island the grid.
    """
    actions = []
    for si in sorted(range(grid.n_sub), key=lambda i: grid.substations[i].id):
        k = int(grid.slot_counts[si])
        if k < 2:
            continue
        sub_id = grid.substations[si].id
        for mask in range(1, 2 ** (k - 1)):
            assignment = tuple(1 + ((mask >> (pos - 1)) & 1 if pos else 0) for pos in range(k))
            actions.append(Action(sub_id=sub_id, assignment=assignment))
    return actions


def enumerate_line_actions(grid: GridModel) -> list[Action]:
    return [Action(line_id=l.id) for l in sorted(grid.lines, key=lambda l: l.id)]


def islands_statically(grid: GridModel, action: Action) -> bool:
    """Would this action split the default-topology grid apart?"""
    topo = apply_action(grid, grid.default_topology(), action)
    return connectivity_check(grid, topo).component_count > 1


class ActionSpace:
    """Ordered, indexable action list; index 0 is always do-nothing."""

    def __init__(self, actions: Sequence[Action]):
        actions = list(actions)
        if not actions or actions[0] != DO_NOTHING:
            raise ValueError("action space must start with do-nothing")
        if len(set(actions)) != len(actions):
            raise ValueError("duplicate actions in space")
        self.actions = actions
        self._index = {a: i for i, a in enumerate(actions)}

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def __getitem__(self, i: int) -> Action:
        return self.actions[i]

    def index_of(self, action: Action) -> int:
        return self._index[action]

    def to_dict(self) -> dict:
        return {"format": "gridtopo-actions", "version": 1,
                "actions": [a.to_dict() for a in self.actions]}

    @staticmethod
    def from_dict(doc: dict) -> "ActionSpace":
        if doc.get("format") != "gridtopo-actions":
            raise ValueError("not an action-space manifest")
        return ActionSpace([Action.from_dict(d) for d in doc["actions"]])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=0)
            fh.write("\n")

    @staticmethod
    def load(path) -> "ActionSpace":
        with open(path) as fh:
            return ActionSpace.from_dict(json.load(fh))

    def manifest_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def build_full_space(grid: GridModel) -> ActionSpace:
    """Do-nothing, all valid singles, and all valid node+line combos.

    Valid means the action's static application on the default topology
    leaves the grid in one piece (stranding any element counts as a split).
    """
    node_ok = [a for a in enumerate_node_actions(grid) if not islands_statically(grid, a)]
    line_ok = [a for a in enumerate_line_actions(grid) if not islands_statically(grid, a)]
    combos = []
    for na in node_ok:
        for la in line_ok:
            combo = Action(sub_id=na.sub_id, assignment=na.assignment, line_id=la.line_id)
            if not islands_statically(grid, combo):
                combos.append(combo)
    return ActionSpace([DO_NOTHING] + node_ok + line_ok + combos)


def reduce_space(grid: GridModel, env_factory: Callable, chronics: Iterable, budget: int,
                 states_per_chronic: int = 100, seed: int = 0) -> ActionSpace:
    """Keep all singles plus the ``budget`` combos with best mean one-step reward.

    States are drawn uniformly from do-nothing rollouts over the given
    chronics; each candidate combo is simulated from every sampled state
    and ranked by its mean predicted reward (ties broken by enumeration
    order). Deterministic for a fixed (grid, chronics, seed).
    """
    full = build_full_space(grid)
    singles = [a for a in full.actions[1:] if a.kind != "combo"]
    combos = [a for a in full.actions if a.kind == "combo"]
    if budget > len(combos):
        raise ValueError(f"budget {budget} exceeds {len(combos)} available combos")
    if budget == 0:
        return ActionSpace([DO_NOTHING] + singles)

    rng = np.random.default_rng(seed)
    snapshots = []
    for chronic in chronics:
        env = env_factory()
        env.reset(chronic)
        states = [env.snapshot()]
        while not env.done and env.t < chronic.n_steps - 1:
            env.step(DO_NOTHING)
            if not env.done:
                states.append(env.snapshot())
        take = min(states_per_chronic, len(states))
        for idx in rng.choice(len(states), size=take, replace=False):
            snapshots.append((env, states[int(idx)]))

    totals = np.zeros(len(combos))
    for env, snap in snapshots:
        env.restore(snap)
        for ci, action in enumerate(combos):
            totals[ci] += env.simulate(action).reward
    order = sorted(range(len(combos)), key=lambda ci: (-totals[ci], ci))
    picked = [combos[ci] for ci in sorted(order[:budget])]
    return ActionSpace([DO_NOTHING] + singles + picked)


@dataclass(frozen=True)
class Legality:
    legal: bool
    reason: str = ""


def is_legal(env, action: Action) -> Legality:
    """Check an action against the environment's current rule state.

    Rules, in reporting order: cooldown on a touched line or substation,
    reconnection before the recovery timer expired, switching a line under
    scheduled maintenance, and islanding the grid. Never mutates ``env``.
    """
    grid: GridModel = env.grid
    topo: TopologyState = env.topology
    if action.line_id is not None:
        li = grid.line_pos[action.line_id]
        if topo.line_cooldown[li] > 0:
            return Legality(False, "cooldown")
        if not topo.line_in_service[li] and topo.recovery_timer[li] > 0:
            return Legality(False, "recovery")
        if env.maintenance_active(li, env.t + 1):
            return Legality(False, "maintenance")
    if action.sub_id is not None:
        si = grid.sub_pos[action.sub_id]
        if topo.sub_cooldown[si] > 0:
            return Legality(False, "cooldown")
    if action.kind != "do_nothing":
        hypothetical = apply_action(grid, topo, action)
        if connectivity_check(grid, hypothetical).component_count > 1:
            return Legality(False, "islanding")
    return Legality(True)
