"""Brute-force oracle for H^1 x R^nu over scaled vertical metrics.

Standalone: J is assembled from the single bracket [X, Y] = T padded with
nu zero rows/columns (the Euclidean directions).  The metric is Q = [lam^2],
the unit vertical vector t = 1/lam, and delta is scanned over lam.
"""
import sys

import numpy as np


def j_operator(nu, lam):
    m = 2 + nu
    c = np.zeros((m, m))
    c[0, 1], c[1, 0] = 1.0, -1.0
    return c.T * (lam**2 / lam)


def deviation_at(nu, lam):
    J = j_operator(nu, lam)
    m = J.shape[0]
    D = J @ J + np.eye(m)
    return np.sqrt(np.sum(D * D) / m)


def scan(nu, lo=1e-3, hi=1e3, n=20001, rounds=4):
    grid = np.geomspace(lo, hi, n)
    for _ in range(rounds):
        vals = np.array([deviation_at(nu, s) for s in grid])
        i = int(np.argmin(vals))
        a, z = grid[max(i - 2, 0)], grid[min(i + 2, len(grid) - 1)]
        grid = np.linspace(a, z, 2001)
    vals = np.array([deviation_at(nu, s) for s in grid])
    i = int(np.argmin(vals))
    return float(vals[i]), float(grid[i])


if __name__ == "__main__":
    nu = int(sys.argv[1]) if len(sys.argv) > 1 else 2
    val, lam = scan(nu)
    print(f"nu={nu} delta={val:.12f} lam={lam:.9f} sqrt(nu/(2+nu))={np.sqrt(nu / (2 + nu)):.12f}")
