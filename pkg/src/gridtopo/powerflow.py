"""AC (Newton-Raphson) and DC power flow over the electrical-node graph.

Per-unit conventions: injections are converted from MW/MVAr using the
grid's MVA base. Current magnitudes are reported in "amperes" on a base
current numerically equal to ``base_mva`` (single-phase per-unit with a
nominal voltage base), so a thermal limit behaves like an MVA rating at
nominal voltage in AC mode and is read directly as MW in DC mode. Only
the flow-to-limit ratio matters downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridModel, NodeTable, TopologyState, connectivity_check, electrical_nodes

SLACK, PV, PQ = 0, 1, 2


class CaseError(ValueError):
    """Raised when a power-flow case cannot be assembled."""


@dataclass
class Injections:
    """Realized or forecast element injections for one timestep (MW / MVAr / p.u.)."""

    load_p: np.ndarray
    load_q: np.ndarray
    gen_p: np.ndarray
    gen_v: np.ndarray

    def copy(self) -> "Injections":
        return Injections(self.load_p.copy(), self.load_q.copy(),
                          self.gen_p.copy(), self.gen_v.copy())


@dataclass
class PowerFlowCase:
    """One solvable snapshot: nodes of the slack component, Y-bus, injections."""

    node_keys: tuple            # (substation id, bus-bar) per case node
    node_type: np.ndarray       # SLACK / PV / PQ per case node
    p_inj: np.ndarray           # net scheduled injection, p.u.
    q_inj: np.ndarray
    v_set: np.ndarray           # magnitude setpoint where type != PQ
    ybus: np.ndarray            # dense complex admittance matrix
    line_idx: np.ndarray        # grid line position per case branch
    br_from: np.ndarray         # case node per branch end
    br_to: np.ndarray
    yff: np.ndarray             # branch admittance terms (complex)
    yft: np.ndarray
    ytf: np.ndarray
    ytt: np.ndarray
    br_x: np.ndarray            # branch series reactance, p.u.
    base_mva: float
    n_line_total: int

    @property
    def n_nodes(self) -> int:
        return len(self.node_keys)


@dataclass
class PowerFlowSolution:
    converged: bool
    iterations: int
    max_mismatch: float
    singular: bool
    mode: str                   # "ac" or "dc"
    node_keys: tuple
    vm: np.ndarray              # per case node, p.u.
    va: np.ndarray              # per case node, rad
    p_from: np.ndarray          # per grid line, MW (zero when out of service)
    q_from: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray
    i_from: np.ndarray          # per grid line, "A" on the base_mva current base
    i_to: np.ndarray


def build_case(grid: GridModel, topology: TopologyState, injections: Injections,
               nodes: NodeTable | None = None) -> PowerFlowCase:
    """Aggregate element injections onto electrical nodes of the slack component.

    Loads enter negative, scheduled generation positive; the slack node
    absorbs the imbalance. A node holding at least one generator is PV
    with the setpoint of its lowest-id generator; a missing setpoint
    (NaN) is an error. Nodes outside the slack component are excluded
    (their admissibility is the environment's concern).
    """
    if nodes is None:
        nodes = electrical_nodes(grid, topology)
    conn = connectivity_check(grid, topology, nodes)

    slack_gens = [gi for gi in range(grid.n_gen) if grid.gen_sub[gi] == grid.slack_sub_pos]
    if not slack_gens:
        raise CaseError("slack substation has no generator")
    slack_gi = min(slack_gens, key=lambda gi: grid.generators[gi].id)
    slack_node = int(nodes.gen_node[slack_gi])
    main = conn.component_of[slack_node]

    case_of_node = np.full(nodes.n_nodes, -1, dtype=np.intp)
    keys = []
    for ni in range(nodes.n_nodes):
        if conn.component_of[ni] == main:
            case_of_node[ni] = len(keys)
            keys.append(nodes.keys[ni])
    n = len(keys)

    base = grid.base_mva
    p_inj = np.zeros(n)
    q_inj = np.zeros(n)
    v_set = np.ones(n)
    node_type = np.full(n, PQ, dtype=np.intp)

    for di in range(grid.n_load):
        ci = case_of_node[nodes.load_node[di]]
        if ci >= 0:
            p_inj[ci] -= injections.load_p[di] / base
            q_inj[ci] -= injections.load_q[di] / base

    pv_owner = {}               # case node -> lowest-id generator on it
    for gi in range(grid.n_gen):
        ci = case_of_node[nodes.gen_node[gi]]
        if ci < 0:
            continue
        p_inj[ci] += injections.gen_p[gi] / base
        if ci not in pv_owner or grid.generators[gi].id < grid.generators[pv_owner[ci]].id:
            pv_owner[ci] = gi
    for ci, gi in pv_owner.items():
        setpoint = injections.gen_v[gi]
        if not np.isfinite(setpoint):
            raise CaseError(f"missing voltage setpoint for generator {grid.generators[gi].id}")
        node_type[ci] = PV
        v_set[ci] = setpoint
    node_type[case_of_node[slack_node]] = SLACK

    # Branch admittances over in-service lines inside the component.
    line_idx, br_from, br_to = [], [], []
    for li in range(grid.n_line):
        f, t = nodes.line_nodes[li]
        if f < 0:
            continue
        cf, ct = case_of_node[f], case_of_node[t]
        if cf < 0 or ct < 0:
            continue
        line_idx.append(li)
        br_from.append(cf)
        br_to.append(ct)
    line_idx = np.array(line_idx, dtype=np.intp)
    br_from = np.array(br_from, dtype=np.intp)
    br_to = np.array(br_to, dtype=np.intp)

    r = np.array([grid.lines[li].r for li in line_idx])
    x = np.array([grid.lines[li].x for li in line_idx])
    b = np.array([grid.lines[li].b for li in line_idx])
    ys = 1.0 / (r + 1j * x)
    yff = ys + 0.5j * b
    ytt = ys + 0.5j * b
    yft = -ys
    ytf = -ys

    ybus = np.zeros((n, n), dtype=complex)
    np.add.at(ybus, (br_from, br_from), yff)
    np.add.at(ybus, (br_to, br_to), ytt)
    np.add.at(ybus, (br_from, br_to), yft)
    np.add.at(ybus, (br_to, br_from), ytf)

    return PowerFlowCase(tuple(keys), node_type, p_inj, q_inj, v_set, ybus,
                         line_idx, br_from, br_to, yff, yft, ytf, ytt, x,
                         base, grid.n_line)


def _solve_linear(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    # Isolated so a sparse backend can slot in for larger grids.
    return np.linalg.solve(a, rhs)


def _branch_quantities(case: PowerFlowCase, v: np.ndarray, mode: str) -> dict:
    out = {name: np.zeros(case.n_line_total) for name in
           ("p_from", "q_from", "p_to", "q_to", "i_from", "i_to")}
    if len(case.line_idx) == 0:
        return out
    vf = v[case.br_from]
    vt = v[case.br_to]
    i_f = case.yff * vf + case.yft * vt
    i_t = case.ytf * vf + case.ytt * vt
    s_f = vf * np.conj(i_f)
    s_t = vt * np.conj(i_t)
    base = case.base_mva
    out["p_from"][case.line_idx] = s_f.real * base
    out["q_from"][case.line_idx] = s_f.imag * base
    out["p_to"][case.line_idx] = s_t.real * base
    out["q_to"][case.line_idx] = s_t.imag * base
    out["i_from"][case.line_idx] = np.abs(i_f) * base
    out["i_to"][case.line_idx] = np.abs(i_t) * base
    if mode == "dc":
        out["q_from"][:] = 0.0
        out["q_to"][:] = 0.0
    return out


def _warm_start(case: PowerFlowCase, start: PowerFlowSolution | None):
    vm = case.v_set.copy()
    vm[case.node_type == PQ] = 1.0
    va = np.zeros(case.n_nodes)
    if start is not None and start.converged:
        prev = {k: i for i, k in enumerate(start.node_keys)}
        for ci, key in enumerate(case.node_keys):
            pi = prev.get(key)
            if pi is not None:
                va[ci] = start.va[pi]
                if case.node_type[ci] == PQ:
                    vm[ci] = start.vm[pi]
    return vm, va


def solve_ac(case: PowerFlowCase, tol: float = 1e-8, max_iter: int = 20,
             start: PowerFlowSolution | None = None) -> PowerFlowSolution:
    """Full Newton-Raphson on the polar mismatch equations.

    Divergence is reported, never raised; a singular Jacobian sets the
    ``singular`` flag as well. Warm starting maps the previous solution
    onto matching node keys and falls back to flat values elsewhere.
    """
    n = case.n_nodes
    types = case.node_type
    pv = np.flatnonzero(types == PV)
    pq = np.flatnonzero(types == PQ)
    pvpq = np.concatenate([pv, pq])
    n1, n2 = len(pvpq), len(pq)

    vm, va = _warm_start(case, start)
    s_spec = case.p_inj + 1j * case.q_inj

    def mismatch(v):
        s = v * np.conj(case.ybus @ v)
        ds = s - s_spec
        return np.concatenate([ds[pvpq].real, ds[pq].imag])

    converged = False
    singular = False
    iterations = 0
    v = vm * np.exp(1j * va)
    f = mismatch(v)
    max_mis = float(np.max(np.abs(f))) if len(f) else 0.0

    while max_mis > tol and iterations < max_iter:
        # dS/dVa and dS/dVm in complex matrix form.
        ibus = case.ybus @ v
        diag_v = np.diag(v)
        diag_i = np.diag(ibus)
        diag_vnorm = np.diag(v / np.abs(v))
        ds_dva = 1j * diag_v @ np.conj(diag_i - case.ybus @ diag_v)
        ds_dvm = diag_v @ np.conj(case.ybus @ diag_vnorm) + np.conj(diag_i) @ diag_vnorm

        jac = np.empty((n1 + n2, n1 + n2))
        jac[:n1, :n1] = ds_dva[np.ix_(pvpq, pvpq)].real
        jac[:n1, n1:] = ds_dvm[np.ix_(pvpq, pq)].real
        jac[n1:, :n1] = ds_dva[np.ix_(pq, pvpq)].imag
        jac[n1:, n1:] = ds_dvm[np.ix_(pq, pq)].imag
        try:
            dx = _solve_linear(jac, f)
        except np.linalg.LinAlgError:
            singular = True
            break
        if not np.all(np.isfinite(dx)):
            singular = True
            break
        va[pvpq] -= dx[:n1]
        vm[pq] -= dx[n1:]
        iterations += 1
        v = vm * np.exp(1j * va)
        f = mismatch(v)
        max_mis = float(np.max(np.abs(f))) if len(f) else 0.0

    converged = bool(max_mis <= tol and not singular and np.all(vm > 0))
    flows = _branch_quantities(case, v, "ac")
    return PowerFlowSolution(converged, iterations, max_mis, singular, "ac",
                             case.node_keys, vm, va, **flows)


def solve_dc(case: PowerFlowCase) -> PowerFlowSolution:
    """Linear susceptance solve: angles from P injections, magnitudes pinned at 1."""
    n = case.n_nodes
    slack = int(np.flatnonzero(case.node_type == SLACK)[0])

    bmat = np.zeros((n, n))
    inv_x = 1.0 / case.br_x if len(case.line_idx) else case.br_x
    if len(case.line_idx):
        np.add.at(bmat, (case.br_from, case.br_from), inv_x)
        np.add.at(bmat, (case.br_to, case.br_to), inv_x)
        np.add.at(bmat, (case.br_from, case.br_to), -inv_x)
        np.add.at(bmat, (case.br_to, case.br_from), -inv_x)

    keep = np.array([i for i in range(n) if i != slack], dtype=np.intp)
    theta = np.zeros(n)
    singular = False
    if len(keep):
        try:
            theta[keep] = _solve_linear(bmat[np.ix_(keep, keep)], case.p_inj[keep])
        except np.linalg.LinAlgError:
            singular = True
    if not singular and not np.all(np.isfinite(theta)):
        singular = True

    vm = np.ones(n)
    flows = {name: np.zeros(case.n_line_total) for name in
             ("p_from", "q_from", "p_to", "q_to", "i_from", "i_to")}
    if not singular and len(case.line_idx):
        p_pu = (theta[case.br_from] - theta[case.br_to]) * inv_x
        flows["p_from"][case.line_idx] = p_pu * case.base_mva
        flows["p_to"][case.line_idx] = -p_pu * case.base_mva
        flows["i_from"][case.line_idx] = np.abs(p_pu) * case.base_mva
        flows["i_to"][case.line_idx] = np.abs(p_pu) * case.base_mva
    return PowerFlowSolution(not singular, 1 if len(keep) else 0, 0.0, singular, "dc",
                             case.node_keys, vm, theta, **flows)


def line_loading(solution: PowerFlowSolution, grid: GridModel) -> np.ndarray:
    """Per-line loading ratio: flow over thermal limit, worse end in AC mode."""
    if solution.mode == "dc":
        return np.abs(solution.p_from) / grid.thermal_limits
    return np.maximum(solution.i_from, solution.i_to) / grid.thermal_limits
