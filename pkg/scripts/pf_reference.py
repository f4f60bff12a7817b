"""Independent reference solution for the shipped 14-bus base case.

Gauss-Seidel on the complex voltage updates with PV-bus reactive
adjustment, using its own admittance assembly straight from the branch
table (nothing shared with the package solver). The printed voltage
table is frozen into the test suite as the power-flow oracle.

    python3 scripts/pf_reference.py
"""

import numpy as np

# Same network data the shipped model uses (taps and shunts not modeled).
BRANCHES = [
    (1, 2, 0.01938, 0.05917, 0.0528), (1, 5, 0.05403, 0.22304, 0.0492),
    (2, 3, 0.04699, 0.19797, 0.0438), (2, 4, 0.05811, 0.17632, 0.0340),
    (2, 5, 0.05695, 0.17388, 0.0346), (3, 4, 0.06701, 0.17103, 0.0128),
    (4, 5, 0.01335, 0.04211, 0.0), (4, 7, 0.0, 0.20912, 0.0),
    (4, 9, 0.0, 0.55618, 0.0), (5, 6, 0.0, 0.25202, 0.0),
    (6, 11, 0.09498, 0.19890, 0.0), (6, 12, 0.12291, 0.25581, 0.0),
    (6, 13, 0.06615, 0.13027, 0.0), (7, 8, 0.0, 0.17615, 0.0),
    (7, 9, 0.0, 0.11001, 0.0), (9, 10, 0.03181, 0.08450, 0.0),
    (9, 14, 0.12711, 0.27038, 0.0), (10, 11, 0.08205, 0.19207, 0.0),
    (12, 13, 0.22092, 0.19988, 0.0), (13, 14, 0.17093, 0.34802, 0.0),
]
# bus -> (Pd, Qd) MW / MVAr
LOADS = {2: (21.7, 12.7), 3: (94.2, 19.0), 4: (47.8, -3.9), 5: (7.6, 1.6),
         6: (11.2, 7.5), 9: (29.5, 16.6), 10: (9.0, 5.8), 11: (3.5, 1.8),
         12: (6.1, 1.6), 13: (13.5, 5.8), 14: (14.9, 5.0)}
# bus -> (Pg MW, V setpoint); bus 1 is the slack
GENS = {1: (232.4, 1.06), 2: (40.0, 1.045), 3: (0.0, 1.01), 6: (0.0, 1.07), 8: (0.0, 1.09)}
BASE = 100.0
N = 14


def assemble_ybus():
    y = np.zeros((N, N), dtype=complex)
    for f, t, r, x, b in BRANCHES:
        f, t = f - 1, t - 1
        ys = 1.0 / (r + 1j * x)
        y[f, f] += ys + 0.5j * b
        y[t, t] += ys + 0.5j * b
        y[f, t] -= ys
        y[t, f] -= ys
    return y


def gauss_seidel(tol=1e-12, max_iter=200_000):
    y = assemble_ybus()
    p = np.zeros(N)
    q = np.zeros(N)
    for bus, (pd, qd) in LOADS.items():
        p[bus - 1] -= pd / BASE
        q[bus - 1] -= qd / BASE
    for bus, (pg, _) in GENS.items():
        p[bus - 1] += pg / BASE

    v = np.ones(N, dtype=complex)
    for bus, (_, vset) in GENS.items():
        v[bus - 1] = vset
    pv = [b - 1 for b in GENS if b != 1]

    for it in range(max_iter):
        v_prev = v.copy()
        for i in range(1, N):
            if i in pv:
                q[i] = (v[i] * np.conj(y[i] @ v)).imag
                s = p[i] + 1j * q[i]
                v[i] = (np.conj(s / v[i]) - (y[i] @ v - y[i, i] * v[i])) / y[i, i]
                v[i] = GENS[i + 1][1] * v[i] / abs(v[i])
            else:
                s = p[i] + 1j * q[i]
                v[i] = (np.conj(s / v[i]) - (y[i] @ v - y[i, i] * v[i])) / y[i, i]
        if np.max(np.abs(v - v_prev)) < tol:
            break
    # residual mismatch at non-slack buses (P everywhere, Q at PQ buses)
    s_calc = v * np.conj(y @ v)
    mis = 0.0
    for i in range(1, N):
        mis = max(mis, abs(s_calc[i].real - p[i]))
        if i not in pv:
            mis = max(mis, abs(s_calc[i].imag - q[i]))
    return v, it + 1, mis


def main():
    v, iters, mis = gauss_seidel()
    print(f"# Gauss-Seidel reference: {iters} sweeps, max mismatch {mis:.3e} p.u.")
    print("REFERENCE_VM = [")
    print("    " + ", ".join(f"{abs(x):.10f}" for x in v) + ",")
    print("]")
    print("REFERENCE_VA = [  # radians")
    print("    " + ", ".join(f"{np.angle(x):.10f}" for x in v) + ",")
    print("]")


if __name__ == "__main__":
    main()
