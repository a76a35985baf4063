"""Brute-force reference computations shared by the test modules."""

import math

import numpy as np
from scipy import integrate


def grid_k(body, x, t, half=2.0, step=1e-3, center=(0.0, 0.0), chunk=500):
    """``min ||y||_B + t ||x - y||_2`` over a square grid in the plane."""
    x = np.asarray(x, dtype=float)
    c = np.asarray(center, dtype=float)
    axis = np.arange(-half, half + step / 2, step)
    best, arg = math.inf, None
    for i in range(0, len(axis), chunk):
        gx, gy = np.meshgrid(axis[i:i + chunk] + c[0], axis + c[1], indexing="ij")
        Y = np.c_[gx.ravel(), gy.ravel()]
        f = np.asarray(body.gauge(Y)) + t * np.linalg.norm(x - Y, axis=1)
        j = int(np.argmin(f))
        if f[j] < best:
            best, arg = float(f[j]), Y[j]
    return best, arg


def grid_k_refined(body, x, t, half=2.0):
    """Coarse grid, then two finer grids around the incumbent (objective is convex)."""
    v, y = grid_k(body, x, t, half, 1e-2)
    v2, y = grid_k(body, x, t, 0.03, 1e-4, center=y)
    v3, _ = grid_k(body, x, t, 3e-4, 1e-6, center=y)
    return min(v, v2, v3)


def interval_entropy(n, length=2.0):
    """``e_n([0, length])``: ``m = 2^{2^n} - 1`` intervals of radius ``length / (2m)``."""
    m = 2 ** (2 ** n) - 1
    return length / (2 * m)


def circle_cover_radius(m):
    """Covering radius of the unit circle by ``m`` centers (chord half-angle)."""
    if m == 1:
        return 1.0
    if m == 2:
        return 1.0
    return math.sin(math.pi / m)


def expected_max_abs(k):
    """``E max_i |g_i|`` for ``k`` i.i.d. standard normals, by quadrature."""
    def tail(s):
        cdf = math.erf(s / math.sqrt(2))
        return 1 - cdf ** k
    val, _ = integrate.quad(tail, 0, math.inf, epsabs=1e-12)
    return val


def pruned_grid_k(body, x, t, lip, half, rel=1e-5, start=201, max_cells=4_000_000):
    """Grid minimisation of ``||y||_B + t ||x - y||_2`` over ``[-half, half]^2`` with pruning.

    ``lip`` bounds the Lipschitz constant of the objective, so a cell whose
    centre value minus ``lip`` times its half-diagonal exceeds the incumbent
    cannot contain the minimum.  Surviving cells are split 3x3 until the
    certified gap ``lip * half-diagonal`` drops below ``rel * incumbent``.
    Returns ``(value, lower)`` with ``lower <= min <= value``.
    """
    x = np.asarray(x, dtype=float)
    f = lambda Y: np.asarray(body.gauge(Y)) + t * np.linalg.norm(x - Y, axis=1)
    axis = np.linspace(-half, half, start)
    h = axis[1] - axis[0]
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    C = np.c_[gx.ravel(), gy.ravel()]
    vals = f(C)
    best = float(vals.min())
    offsets = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)
    while True:
        r = h / math.sqrt(2)
        lower = float(np.min(vals - lip * r))
        if lip * r <= rel * max(best, 1e-300):
            return best, max(lower, 0.0)
        keep = vals - lip * r <= best
        C = (C[keep][:, None, :] + offsets[None, :, :] * (h / 3)).reshape(-1, 2)
        if len(C) > max_cells:
            raise RuntimeError("too many surviving cells")
        h /= 3
        vals = f(C)
        best = min(best, float(vals.min()))
