"""Static grid description and switchable topology state.

A substation carries two bus-bars. Every element end that terminates at a
substation (line origin, line extremity, generator, load) occupies one
"slot" of that substation, and the topology assigns each slot to bus-bar 1
or 2. An occupied bus-bar forms one electrical node; the power-flow graph
is built over these nodes with in-service lines as edges.

Slot ordering inside a substation is frozen so that assignment vectors are
unambiguous across save/load: line endpoints sorted by line id (origin
before extremity when both ends land on the same substation), then
generators by id, then loads by id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

ORIGIN = 0
EXTREMITY = 1

KIND_LINE = "line"
KIND_GEN = "gen"
KIND_LOAD = "load"


class GridFormatError(ValueError):
    """Raised when a grid description violates the model invariants."""


@dataclass(frozen=True)
class Substation:
    id: int
    name: str


@dataclass(frozen=True)
class Line:
    id: str
    from_sub: int
    to_sub: int
    r: float
    x: float
    b: float
    thermal_limit: float


@dataclass(frozen=True)
class Generator:
    id: str
    sub: int
    p_max: float


@dataclass(frozen=True)
class Load:
    id: str
    sub: int


@dataclass(frozen=True)
class Slot:
    """One element attachment at a substation."""

    kind: str          # KIND_LINE / KIND_GEN / KIND_LOAD
    index: int         # position of the element in the grid's element list
    end: int           # ORIGIN/EXTREMITY for lines, 0 otherwise


class GridModel:
    """Validated static network description plus frozen indexing tables.

    The indexing tables (slot layout, per-line substation positions) are
    derived once at construction and shared by topology manipulation,
    power-flow case assembly and the observation encoder.
    """

    def __init__(self, substations, lines, generators, loads, slack_sub, base_mva):
        self.substations = [s if isinstance(s, Substation) else Substation(**s) for s in substations]
        self.lines = [l if isinstance(l, Line) else Line(**l) for l in lines]
        self.generators = [g if isinstance(g, Generator) else Generator(**g) for g in generators]
        self.loads = [l if isinstance(l, Load) else Load(**l) for l in loads]
        self.slack_sub = slack_sub
        self.base_mva = float(base_mva)
        self._validate()
        self._build_index()

    def _validate(self):
        sub_ids = [s.id for s in self.substations]
        if len(set(sub_ids)) != len(sub_ids):
            raise GridFormatError("duplicate substation ids")
        known = set(sub_ids)
        for kind, elems in (("line", self.lines), ("generator", self.generators), ("load", self.loads)):
            ids = [e.id for e in elems]
            if len(set(ids)) != len(ids):
                raise GridFormatError(f"duplicate {kind} ids")
        for ln in self.lines:
            if ln.from_sub not in known or ln.to_sub not in known:
                raise GridFormatError(f"line {ln.id} references unknown substation")
            if ln.x == 0.0:
                raise GridFormatError(f"line {ln.id} has zero reactance")
            if ln.thermal_limit <= 0.0:
                raise GridFormatError(f"line {ln.id} has non-positive thermal limit")
        for g in self.generators:
            if g.sub not in known:
                raise GridFormatError(f"generator {g.id} references unknown substation")
        for l in self.loads:
            if l.sub not in known:
                raise GridFormatError(f"load {l.id} references unknown substation")
        if self.slack_sub not in known:
            raise GridFormatError("slack_sub references unknown substation")
        if self.base_mva <= 0.0:
            raise GridFormatError("base_mva must be positive")

    def _build_index(self):
        self.n_sub = len(self.substations)
        self.n_line = len(self.lines)
        self.n_gen = len(self.generators)
        self.n_load = len(self.loads)

        self.sub_pos = {s.id: i for i, s in enumerate(self.substations)}
        self.line_pos = {l.id: i for i, l in enumerate(self.lines)}
        self.gen_pos = {g.id: i for i, g in enumerate(self.generators)}
        self.load_pos = {l.id: i for i, l in enumerate(self.loads)}

        self.line_from = np.array([self.sub_pos[l.from_sub] for l in self.lines], dtype=np.intp)
        self.line_to = np.array([self.sub_pos[l.to_sub] for l in self.lines], dtype=np.intp)

        # Frozen slot layout per substation (see module docstring).
        self.slots: list[list[Slot]] = [[] for _ in range(self.n_sub)]
        for li in sorted(range(self.n_line), key=lambda i: self.lines[i].id):
            ln = self.lines[li]
            self.slots[self.sub_pos[ln.from_sub]].append(Slot(KIND_LINE, li, ORIGIN))
            self.slots[self.sub_pos[ln.to_sub]].append(Slot(KIND_LINE, li, EXTREMITY))
        for gi in sorted(range(self.n_gen), key=lambda i: self.generators[i].id):
            self.slots[self.sub_pos[self.generators[gi].sub]].append(Slot(KIND_GEN, gi, 0))
        for di in sorted(range(self.n_load), key=lambda i: self.loads[i].id):
            self.slots[self.sub_pos[self.loads[di].sub]].append(Slot(KIND_LOAD, di, 0))

        self.slot_counts = np.array([len(s) for s in self.slots], dtype=np.intp)

        # Reverse maps: where does each element end sit?  (sub position, slot position)
        self.line_slot = np.zeros((self.n_line, 2), dtype=np.intp)   # [:, ORIGIN/EXTREMITY] -> slot idx
        self.line_sub = np.zeros((self.n_line, 2), dtype=np.intp)
        self.gen_slot = np.zeros(self.n_gen, dtype=np.intp)
        self.load_slot = np.zeros(self.n_load, dtype=np.intp)
        for si, slots in enumerate(self.slots):
            for pos, slot in enumerate(slots):
                if slot.kind == KIND_LINE:
                    self.line_slot[slot.index, slot.end] = pos
                    self.line_sub[slot.index, slot.end] = si
                elif slot.kind == KIND_GEN:
                    self.gen_slot[slot.index] = pos
                else:
                    self.load_slot[slot.index] = pos

        self.thermal_limits = np.array([l.thermal_limit for l in self.lines])
        self.gen_p_max = np.array([g.p_max for g in self.generators])
        self.gen_sub = np.array([self.sub_pos[g.sub] for g in self.generators], dtype=np.intp)
        self.load_sub = np.array([self.sub_pos[l.sub] for l in self.loads], dtype=np.intp)
        self.slack_sub_pos = self.sub_pos[self.slack_sub]

    def default_topology(self) -> "TopologyState":
        """Everything on bus-bar 1, all lines in service, all timers zero."""
        return TopologyState(
            bus_assignment=[np.ones(k, dtype=np.int8) for k in self.slot_counts],
            line_in_service=np.ones(self.n_line, dtype=bool),
            recovery_timer=np.zeros(self.n_line, dtype=np.int32),
            line_cooldown=np.zeros(self.n_line, dtype=np.int32),
            sub_cooldown=np.zeros(self.n_sub, dtype=np.int32),
            overload_grace=np.zeros(self.n_line, dtype=np.int32),
        )


@dataclass
class TopologyState:
    """Mutable switching state: bus-bar assignments, line status, rule timers."""

    bus_assignment: list[np.ndarray]
    line_in_service: np.ndarray
    recovery_timer: np.ndarray
    line_cooldown: np.ndarray
    sub_cooldown: np.ndarray
    overload_grace: np.ndarray

    def copy(self) -> "TopologyState":
        return TopologyState(
            bus_assignment=[a.copy() for a in self.bus_assignment],
            line_in_service=self.line_in_service.copy(),
            recovery_timer=self.recovery_timer.copy(),
            line_cooldown=self.line_cooldown.copy(),
            sub_cooldown=self.sub_cooldown.copy(),
            overload_grace=self.overload_grace.copy(),
        )

    def validate(self, grid: GridModel):
        for si, assign in enumerate(self.bus_assignment):
            if len(assign) != grid.slot_counts[si]:
                raise GridFormatError(f"assignment arity mismatch at substation {grid.substations[si].id}")
            if not np.all((assign == 1) | (assign == 2)):
                raise GridFormatError("bus assignment entries must be 1 or 2")
        if np.any(self.recovery_timer < 0) or np.any(self.line_cooldown < 0) or np.any(self.sub_cooldown < 0):
            raise GridFormatError("timers must be non-negative")
        if np.any((self.recovery_timer > 0) & self.line_in_service):
            raise GridFormatError("a line under recovery must be out of service")


@dataclass(frozen=True)
class NodeTable:
    """Electrical nodes of a (grid, topology) pair.

    One node per occupied bus-bar, ordered by (substation id, bus-bar).
    A bus-bar is occupied when at least one generator, load, or in-service
    line endpoint is assigned to it; endpoints of out-of-service lines
    attach to nothing.
    """

    keys: tuple[tuple[int, int], ...]        # (substation id, bus-bar index)
    sub_of_node: np.ndarray                  # substation position per node
    line_nodes: np.ndarray                   # (n_line, 2) node index per end, -1 when out of service
    gen_node: np.ndarray                     # node index per generator
    load_node: np.ndarray                    # node index per load

    @property
    def n_nodes(self) -> int:
        return len(self.keys)


def electrical_nodes(grid: GridModel, topology: TopologyState) -> NodeTable:
    """Materialize one electrical node per occupied bus-bar."""
    in_service = topology.line_in_service
    node_of = {}          # (sub position, bar) -> node index
    keys = []
    sub_of_node = []

    order = sorted(range(grid.n_sub), key=lambda i: grid.substations[i].id)
    for si in order:
        assign = topology.bus_assignment[si]
        occupied = set()
        for pos, slot in enumerate(grid.slots[si]):
            if slot.kind == KIND_LINE and not in_service[slot.index]:
                continue
            occupied.add(int(assign[pos]))
        for bar in (1, 2):
            if bar in occupied:
                node_of[(si, bar)] = len(keys)
                keys.append((grid.substations[si].id, bar))
                sub_of_node.append(si)

    line_nodes = np.full((grid.n_line, 2), -1, dtype=np.intp)
    for li in range(grid.n_line):
        if not in_service[li]:
            continue
        for end in (ORIGIN, EXTREMITY):
            si = grid.line_sub[li, end]
            bar = int(topology.bus_assignment[si][grid.line_slot[li, end]])
            line_nodes[li, end] = node_of[(si, bar)]

    gen_node = np.array(
        [node_of[(grid.gen_sub[gi], int(topology.bus_assignment[grid.gen_sub[gi]][grid.gen_slot[gi]]))]
         for gi in range(grid.n_gen)],
        dtype=np.intp,
    )
    load_node = np.array(
        [node_of[(grid.load_sub[di], int(topology.bus_assignment[grid.load_sub[di]][grid.load_slot[di]]))]
         for di in range(grid.n_load)],
        dtype=np.intp,
    )
    return NodeTable(tuple(keys), np.array(sub_of_node, dtype=np.intp), line_nodes, gen_node, load_node)


@dataclass(frozen=True)
class Connectivity:
    component_count: int
    component_of: np.ndarray     # component id per electrical node


def connectivity_check(grid: GridModel, topology: TopologyState,
                       nodes: NodeTable | None = None) -> Connectivity:
    """Connected components of the electrical-node graph (in-service lines as edges).

    component_count == 1 means the grid is intact; any occupied bus-bar
    without a path to the rest (including a bar holding only injections)
    counts as its own component.
    """
    if nodes is None:
        nodes = electrical_nodes(grid, topology)
    n = nodes.n_nodes
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for li in range(grid.n_line):
        f, t = nodes.line_nodes[li]
        if f < 0:
            continue
        rf, rt = find(int(f)), find(int(t))
        if rf != rt:
            parent[rt] = rf

    roots = {}
    component_of = np.zeros(n, dtype=np.intp)
    for i in range(n):
        r = find(i)
        if r not in roots:
            roots[r] = len(roots)
        component_of[i] = roots[r]
    return Connectivity(len(roots), component_of)


def load_grid(path) -> GridModel:
    """Read a grid description document (JSON syntax) from ``path``."""
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return GridModel(
            substations=doc["substations"],
            lines=doc["lines"],
            generators=doc["generators"],
            loads=doc["loads"],
            slack_sub=doc["slack_sub"],
            base_mva=doc["base_mva"],
        )
    except KeyError as exc:
        raise GridFormatError(f"missing top-level field {exc}") from exc
    except TypeError as exc:
        raise GridFormatError(f"malformed grid document: {exc}") from exc


def save_grid(grid: GridModel, path):
    doc = {
        "substations": [{"id": s.id, "name": s.name} for s in grid.substations],
        "lines": [
            {"id": l.id, "from_sub": l.from_sub, "to_sub": l.to_sub,
             "r": l.r, "x": l.x, "b": l.b, "thermal_limit": l.thermal_limit}
            for l in grid.lines
        ],
        "generators": [{"id": g.id, "sub": g.sub, "p_max": g.p_max} for g in grid.generators],
        "loads": [{"id": l.id, "sub": l.sub} for l in grid.loads],
        "slack_sub": grid.slack_sub,
        "base_mva": grid.base_mva,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
