"""Brute-force oracle for the anisotropic Heisenberg group H^n(b).

Standalone: builds J directly from the brackets [X_j, Y_j] = b_j T with no
package imports.  With one vertical direction every metric is Q = [lam^2]
and the unit vertical vector is t = 1/lam, so delta(G) is a 1-D minimum
over lam > 0.  We scan a log grid, then refine with a finer local grid.
"""
import sys

import numpy as np


def j_operator(b, lam):
    n = len(b)
    m = 2 * n
    c = np.zeros((m, m))
    for j, bj in enumerate(b):
        c[j, n + j] = bj
        c[n + j, j] = -bj
    t = 1.0 / lam
    w = lam**2 * t  # Q t
    # entry (r, k) = c[k, r] * (Q t)
    return c.T * w


def deviation_at(b, lam):
    J = j_operator(b, lam)
    m = J.shape[0]
    D = J @ J + np.eye(m)
    return np.sqrt(np.sum(D * D) / m)


def scan(b, lo=1e-3, hi=1e3, n=20001, rounds=4):
    grid = np.geomspace(lo, hi, n)
    for _ in range(rounds):
        vals = np.array([deviation_at(b, s) for s in grid])
        i = int(np.argmin(vals))
        a, z = grid[max(i - 2, 0)], grid[min(i + 2, len(grid) - 1)]
        grid = np.linspace(a, z, 2001)
    vals = np.array([deviation_at(b, s) for s in grid])
    i = int(np.argmin(vals))
    return float(vals[i]), float(grid[i])


if __name__ == "__main__":
    b = [float(v) for v in sys.argv[1].split(",")] if len(sys.argv) > 1 else [1.0, 2.0]
    val, lam = scan(b)
    print(f"b={b} delta={val:.12f} lam={lam:.9f} 3/sqrt(34)={3 / np.sqrt(34):.12f}")
