"""Gauss-Seidel fast sweeping kernels for the first-order metric problem.

The local solver at each node finds the value x satisfying
sum_i ((x - b_i)^+ / h)^2 = f^2, with b_i the smaller of the two axis
neighbors, which is exactly the fixed point of the Rouy-Tourin upwind
discretization of |Dm| = f.  Sweeping the grid in alternating orderings
propagates causality along characteristics; a handful of sweep sets
converges for heterogeneous media.

Nodes with mask value 1 (dirichlet) are frozen; out-of-grid neighbors count
as +infinity, which is the natural outflow condition for a coercive
first-order equation.
"""

import numpy as np
from numba import njit

BIG = 1.0e30


@njit(cache=True)
def _local2(a, b, fh):
    if a > b:
        a, b = b, a
    x = a + fh
    if x <= b:
        return x
    return 0.5 * (a + b + np.sqrt(2.0 * fh * fh - (a - b) ** 2))


@njit(cache=True)
def _local3(a, b, c, fh):
    # sort ascending
    if a > b:
        a, b = b, a
    if b > c:
        b, c = c, b
    if a > b:
        a, b = b, a
    x = a + fh
    if x <= b:
        return x
    s = a + b
    disc = s * s - 2.0 * (a * a + b * b - fh * fh)
    x = 0.5 * (s + np.sqrt(disc))
    if x <= c:
        return x
    s = a + b + c
    disc = s * s - 3.0 * (a * a + b * b + c * c - fh * fh)
    return (s + np.sqrt(disc)) / 3.0


@njit(cache=True)
def sweep1(m, f, h, mask):
    n = m.shape[0]
    change = 0.0
    for d0 in range(2):
        start, stop, step = (0, n, 1) if d0 == 0 else (n - 1, -1, -1)
        for i in range(start, stop, step):
            if mask[i] == 1:
                continue
            a = m[i - 1] if i > 0 else BIG
            b = m[i + 1] if i < n - 1 else BIG
            x = min(a, b) + f[i] * h
            if x < m[i]:
                delta = m[i] - x if m[i] < BIG else 1.0
                if delta > change:
                    change = delta
                m[i] = x
    return change


@njit(cache=True)
def sweep2(m, f, h, mask):
    nx, ny = m.shape
    change = 0.0
    for d0 in range(2):
        xs = (0, nx, 1) if d0 == 0 else (nx - 1, -1, -1)
        for d1 in range(2):
            ys = (0, ny, 1) if d1 == 0 else (ny - 1, -1, -1)
            for i in range(xs[0], xs[1], xs[2]):
                for j in range(ys[0], ys[1], ys[2]):
                    if mask[i, j] == 1:
                        continue
                    a1 = m[i - 1, j] if i > 0 else BIG
                    a2 = m[i + 1, j] if i < nx - 1 else BIG
                    b1 = m[i, j - 1] if j > 0 else BIG
                    b2 = m[i, j + 1] if j < ny - 1 else BIG
                    x = _local2(min(a1, a2), min(b1, b2), f[i, j] * h)
                    if x < m[i, j]:
                        delta = m[i, j] - x if m[i, j] < BIG else 1.0
                        if delta > change:
                            change = delta
                        m[i, j] = x
    return change


@njit(cache=True)
def sweep3(m, f, h, mask):
    nx, ny, nz = m.shape
    change = 0.0
    for d0 in range(2):
        xs = (0, nx, 1) if d0 == 0 else (nx - 1, -1, -1)
        for d1 in range(2):
            ys = (0, ny, 1) if d1 == 0 else (ny - 1, -1, -1)
            for d2 in range(2):
                zs = (0, nz, 1) if d2 == 0 else (nz - 1, -1, -1)
                for i in range(xs[0], xs[1], xs[2]):
                    for j in range(ys[0], ys[1], ys[2]):
                        for k in range(zs[0], zs[1], zs[2]):
                            if mask[i, j, k] == 1:
                                continue
                            a = min(m[i - 1, j, k] if i > 0 else BIG,
                                    m[i + 1, j, k] if i < nx - 1 else BIG)
                            b = min(m[i, j - 1, k] if j > 0 else BIG,
                                    m[i, j + 1, k] if j < ny - 1 else BIG)
                            c = min(m[i, j, k - 1] if k > 0 else BIG,
                                    m[i, j, k + 1] if k < nz - 1 else BIG)
                            x = _local3(a, b, c, f[i, j, k] * h)
                            if x < m[i, j, k]:
                                delta = m[i, j, k] - x if m[i, j, k] < BIG else 1.0
                                if delta > change:
                                    change = delta
                                m[i, j, k] = x
    return change


def sweep(m: np.ndarray, f: np.ndarray, h: float, mask: np.ndarray) -> float:
    """One full set of 2^d directional Gauss-Seidel sweeps; returns max change."""
    if m.ndim == 1:
        return float(sweep1(m, f, h, mask))
    if m.ndim == 2:
        return float(sweep2(m, f, h, mask))
    if m.ndim == 3:
        return float(sweep3(m, f, h, mask))
    raise ValueError("sweeping supports 1, 2 or 3 dimensions")
