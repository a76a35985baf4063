"""Peetre's K-functional ``K(t, x) = inf_y ||y||_B + t ||x - y||`` and the thin sets B_t.

``B_t`` is the set of points ``y`` of ``B`` admitting a certificate ``z``
with ``<z, y> = ||y||_B``, ``||z||_B^* <= 1`` and ``||z||^* <= t``.  For the
coordinate bodies in :mod:`chainlab.bodies` membership reduces to comparing
``t`` with the *membership threshold* ``tau(y)``, the smallest ambient dual
norm over the gauge subdifferential at ``y``.
"""

from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bodies import (
    AbsConvPolytope,
    Euclidean,
    EuclideanBall,
    LqEllipsoid,
    Octahedron,
    PerturbedSimplex,
    _as_points,
    _cvx_norm,
    gauge_subgradient,
    perturbed_min_certificate,
    polytope_min_certificate,
    sign0,
)

DEFAULT_TOL = 1e-6
MAX_ITER = 100_000


class KFunctionalError(RuntimeError):
    """Solver did not certify the requested primal-dual gap."""

    def __init__(self, message, primal=None, dual=None, gap=None):
        super().__init__(message)
        self.primal = primal
        self.dual = dual
        self.gap = gap


@dataclass
class KResult:
    t: float
    value: float
    minimizer: np.ndarray
    certificate: np.ndarray
    gap: float
    method: str = "conic"

    def displacement(self, x, ambient):
        return float(ambient.norm(np.asarray(x) - self.minimizer))

    def to_dict(self):
        return {
            "t": self.t,
            "value": self.value,
            "gap": self.gap,
            "minimizer": self.minimizer.tolist(),
            "certificate": self.certificate.tolist(),
        }


# ---------------------------------------------------------------------------
# Membership threshold and B_t membership
# ---------------------------------------------------------------------------


def membership_threshold(body, ambient, y, zero_tol=1e-12):
    """``tau(y) = inf {||z||^* : z in d||y||_B}``; zero at the origin.

    ``y`` may be a batch.  ``y`` is in ``B_t`` iff ``y`` is in ``B`` and
    ``tau(y) <= t``.
    """
    y = _as_points(y, body.dim)
    single = y.ndim == 1
    Y = np.atleast_2d(y)
    tau = np.zeros(len(Y))
    nz = np.any(Y != 0, axis=1)
    if isinstance(body, (LqEllipsoid, EuclideanBall)):
        if np.any(nz):
            tau[nz] = ambient.dual_norm(body.gradient(Y[nz]))
    elif isinstance(body, Octahedron):
        Z = np.where(Y != 0, np.sign(Y), 0.0) / body._b
        tau = np.asarray(ambient.dual_norm(Z), dtype=float)
    elif isinstance(body, PerturbedSimplex):
        W = body.coords(Y)
        scale = np.sum(np.abs(W), axis=1, keepdims=True)
        small = np.abs(W) <= zero_tol * scale
        full = nz & ~np.any(small, axis=1)
        if np.any(full):
            tau[full] = ambient.dual_norm(body.inv_transpose(np.sign(W[full])))
        for i in np.flatnonzero(nz & ~full):
            w = np.where(small[i], 0.0, W[i])
            z = perturbed_min_certificate(body, body.matrix @ w, ambient)
            tau[i] = float(ambient.dual_norm(z))
    elif isinstance(body, AbsConvPolytope):
        for i in np.flatnonzero(nz):
            tau[i] = float(ambient.dual_norm(polytope_min_certificate(body, Y[i], ambient)))
    else:
        raise TypeError(f"unsupported body {type(body).__name__}")
    return float(tau[0]) if single else tau


@dataclass
class Membership:
    member: bool
    certificate: np.ndarray
    threshold: float

    def __bool__(self):
        return self.member


def _short_circuit_level(body, ambient):
    b = [max(abs(v) for v in row) for row in body.extremes()]
    w = getattr(ambient, "w", (1.0,))
    return 1e6 * max(b) / min(w) if max(b) > 0 else math.inf


def _certificate(body, ambient, y):
    if not np.any(y):
        return np.zeros(body.dim)
    if isinstance(body, PerturbedSimplex):
        # round-off zeros of V^{-1} y must not pin a sign
        w = body.coords(y)
        w = np.where(np.abs(w) <= 1e-12 * np.sum(np.abs(w)), 0.0, w)
        z = body.inv_transpose(sign0(w))
        if ambient.dual_norm(z) <= membership_threshold(body, ambient, y) * (1 + 1e-12):
            return z
        return perturbed_min_certificate(body, body.matrix @ w, ambient)
    z, _ = gauge_subgradient(body, y, ambient)
    return z


def bt_member(body, ambient, t, y, tol=1e-9):
    """Decide ``y in B_t`` and return the certificate used.

    Smooth bodies use the gradient, octahedra the minimal-norm
    subgradient, the perturbed simplex the sign-vector certificate (refined
    by the exact box program when ``V^{-1} y`` has zeros), and general
    polytopes the certificate program.
    """
    y = _as_points(y, body.dim)
    if y.ndim != 1:
        raise ValueError("bt_member expects a single point")
    if t < 0:
        raise ValueError("t must be nonnegative")
    g = float(body.gauge(y))
    if g > 1 + tol:
        raise ValueError(f"point outside B (gauge {g:.6g})")
    if not np.any(y):
        return Membership(True, np.zeros(body.dim), 0.0)
    z = _certificate(body, ambient, y)
    tau = float(ambient.dual_norm(z))
    if t >= _short_circuit_level(body, ambient):
        return Membership(True, z, tau)
    return Membership(tau <= t + tol * max(1.0, t), z, tau)


# ---------------------------------------------------------------------------
# Closed-form descriptions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EllipsoidDilation:
    """``B_t`` is contained in ``dilation * C``, C the l_r ellipsoid with semiaxes ``c``."""

    t: float
    c: tuple
    exponent: float
    dilation: float

    def c_gauge(self, y):
        y = np.asarray(y, dtype=float)
        return np.linalg.norm(y / np.asarray(self.c), ord=self.exponent, axis=-1)

    def contains(self, y, tol=1e-9):
        return bool(self.c_gauge(y) <= self.dilation * (1 + tol) + tol)


@dataclass(frozen=True)
class SparsitySet:
    """``B_t = {y in B : sum_{y_i != 0} weights_i <= t^2}`` (exact)."""

    t: float
    weights: tuple

    def contains(self, y, tol=1e-9):
        y = np.asarray(y, dtype=float)
        return bool(np.sum(np.asarray(self.weights)[y != 0]) <= self.t ** 2 * (1 + tol) + tol)


@dataclass(frozen=True)
class WholeBodyAboveThreshold:
    """``B_t = B`` when ``t >= threshold``, else ``{0}``."""

    t: float
    threshold: float

    def contains(self, y, tol=1e-9):
        return bool(self.t >= self.threshold * (1 - tol) or not np.any(y))


@dataclass(frozen=True)
class Superset:
    """``B_t`` contains the described set (here ``+-conv{x_i}``)."""

    t: float
    description: str
    vertices: np.ndarray

    def contains(self, y, tol=1e-9):
        """Membership in the described inner set, not in ``B_t`` itself."""
        w = np.linalg.solve(self.vertices, np.asarray(y, dtype=float))
        for s in (w, -w):
            if np.all(s >= -tol) and abs(np.sum(s) - 1) <= tol:
                return True
        return False


class NoClosedForm(ValueError):
    pass


def bt_closed_form(body, t, ambient=Euclidean()):
    """Closed-form description of ``B_t`` under the Euclidean ambient norm."""
    if not isinstance(ambient, Euclidean):
        raise NoClosedForm("closed forms are derived for the Euclidean ambient norm")
    if isinstance(body, LqEllipsoid):
        q = body.q
        c = tuple(bi ** (q / (q - 1)) for bi in body.b)
        return EllipsoidDilation(t, c, 2 * q - 2, t ** (1 / (q - 1)))
    if isinstance(body, Octahedron):
        return SparsitySet(t, tuple(1 / bi ** 2 for bi in body.b))
    if isinstance(body, EuclideanBall):
        return WholeBodyAboveThreshold(t, 1 / body.radius)
    if isinstance(body, PerturbedSimplex):
        if t < 1 / body.eps:
            raise NoClosedForm("no guarantee below t = 1/eps")
        return Superset(t, "conv{x_i}", body.matrix)
    raise NoClosedForm(f"no closed form for {type(body).__name__}")


# ---------------------------------------------------------------------------
# K-functional
# ---------------------------------------------------------------------------


def _cvx_gauge(body, y):
    import cvxpy as cp

    if isinstance(body, LqEllipsoid):
        return cp.pnorm(cp.multiply(1 / body._b, y), body.q)
    if isinstance(body, Octahedron):
        return cp.norm1(cp.multiply(1 / body._b, y))
    if isinstance(body, EuclideanBall):
        return cp.norm(y, 2) / body.radius
    if isinstance(body, PerturbedSimplex):
        return cp.norm1(np.linalg.inv(body.matrix) @ y)
    raise TypeError


def _cvx_dual_gauge(body, z):
    import cvxpy as cp

    if isinstance(body, LqEllipsoid):
        return cp.pnorm(cp.multiply(body._b, z), body.dual_exponent)
    if isinstance(body, Octahedron):
        return cp.norm(cp.multiply(body._b, z), "inf")
    if isinstance(body, EuclideanBall):
        return body.radius * cp.norm(z, 2)
    return cp.norm(body.matrix.T @ z, "inf")


class _ConicK:
    """Parametrised primal and dual programs for one (body, ambient) pair."""

    def __init__(self, body, ambient):
        import cvxpy as cp

        d = body.dim
        self.x = cp.Parameter(d)
        self.t = cp.Parameter(nonneg=True)
        # residual w = x - y keeps the program DPP
        self.w = cp.Variable(d)
        if isinstance(body, AbsConvPolytope):
            lam = cp.Variable(len(body.vertices))
            f = cp.norm1(lam)
            cons = [body.matrix @ lam == self.x - self.w]
        else:
            f = _cvx_gauge(body, self.x - self.w)
            cons = []
        self.primal = cp.Problem(cp.Minimize(f + self.t * _cvx_norm(ambient, self.w)), cons)
        self.z = cp.Variable(d)
        self.dual = cp.Problem(
            cp.Maximize(self.x @ self.z),
            [_cvx_dual_gauge(body, self.z) <= 1, _cvx_norm(ambient.dual, self.z) <= self.t],
        )
        self.lock = threading.Lock()

    def solve(self, x, t):
        import cvxpy as cp

        opts = dict(solver=cp.CLARABEL, max_iter=200, tol_gap_abs=1e-12,
                    tol_gap_rel=1e-12, tol_feas=1e-12, tol_ktratio=1e-9)
        with self.lock, warnings.catch_warnings():
            # accuracy is certified afterwards from the closed-form gauges
            warnings.simplefilter("ignore")
            self.x.value = x
            self.t.value = t
            self.primal.solve(**opts)
            y = None if self.w.value is None else x - np.array(self.w.value, dtype=float)
            self.dual.solve(**opts)
            z = None if self.z.value is None else np.array(self.z.value, dtype=float)
        return y, z


@lru_cache(maxsize=64)
def _conic(body, ambient):
    return _ConicK(body, ambient)


def _feasible_dual(body, ambient, z, t):
    s = max(1.0, float(body.dual_gauge(z)), float(ambient.dual_norm(z)) / t)
    return z / s


def k_functional(body, ambient, t, x, tol=DEFAULT_TOL):
    """Evaluate ``K(t, x)`` with a certified primal-dual gap.

    Exact answers are returned when the optimum is at ``y = x`` (``x`` in
    the cone over ``B_t``) or at ``y = 0``; otherwise both the primal and
    the dual (maximise ``<z, x>`` over ``||z||_B^* <= 1, ||z||^* <= t``) are
    solved as conic programs and the gap is recomputed from the closed-form
    gauges.  When the dual value reaches ``||x||_B`` within tolerance,
    ``x`` itself is reported as minimiser.
    """
    x = _as_points(x, body.dim)
    if t < 0 or tol <= 0:
        raise ValueError("need t >= 0 and tol > 0")
    t = float(t)
    d = body.dim
    zero = np.zeros(d)
    if t == 0 or not np.any(x):
        return KResult(t, 0.0, zero, zero, 0.0, method="exact")

    gx = float(body.gauge(x))
    # optimum at y = x
    if math.isfinite(gx):
        zx = _certificate(body, ambient, x)
        if float(ambient.dual_norm(zx)) <= t * (1 + 1e-12):
            gap = abs(gx - float(zx @ x))
            return KResult(t, gx, x.copy(), zx, gap, method="exact")
    # optimum at y = 0
    z0 = t * ambient.dual.dual_witness(x)
    if float(body.dual_gauge(z0)) <= 1 + 1e-12:
        val = t * float(ambient.norm(x))
        return KResult(t, val, zero, z0, abs(val - float(z0 @ x)), method="exact")

    y, z = _conic(body, ambient).solve(x, t)
    if y is None or z is None:
        raise KFunctionalError("conic solver returned no solution")
    z = _feasible_dual(body, ambient, z, t)
    primal = float(body.gauge(y)) + t * float(ambient.norm(x - y))
    dual = float(z @ x)
    if math.isfinite(gx) and gx - dual <= tol * (1 + abs(gx)) and gx <= primal:
        y, primal = x.copy(), gx
    gap = max(primal - dual, 0.0)
    if gap > tol * (1 + abs(primal)):
        raise KFunctionalError(
            f"gap {gap:.3g} above tolerance at t={t}", primal=(primal, y), dual=(dual, z), gap=gap
        )
    return KResult(t, primal, y, z, gap)


def k_profile(body, ambient, x, t_grid, tol=DEFAULT_TOL):
    """``k_functional`` over an increasing grid, returned in grid order."""
    t_grid = [float(t) for t in t_grid]
    if not t_grid:
        raise ValueError("t_grid must be nonempty")
    if any(b <= a for a, b in zip(t_grid, t_grid[1:])) or t_grid[0] < 0:
        raise ValueError("t_grid must be nonnegative and strictly increasing")
    return [k_functional(body, ambient, t, x, tol) for t in t_grid]


def displacements(profile, x, ambient):
    return np.array([r.displacement(x, ambient) for r in profile])


def concavity_defects(ts, values):
    """``lam K(t_{i-1}) + (1 - lam) K(t_{i+1}) - K(t_i)``; nonpositive for concave K."""
    ts = np.asarray(ts, dtype=float)
    k = np.asarray(values, dtype=float)
    if len(ts) < 3:
        return np.zeros(0)
    lam = (ts[2:] - ts[1:-1]) / (ts[2:] - ts[:-2])
    return lam * k[:-2] + (1 - lam) * k[2:] - k[1:-1]


# ---------------------------------------------------------------------------
# Sampling B_t
# ---------------------------------------------------------------------------


def _normalise(body, pts):
    g = np.asarray(body.gauge(pts), dtype=float)
    keep = g > 0
    return pts[keep] / g[keep, None]


def _octahedron_fill(body, ambient, t, rng, n):
    """Random maximal sparsity patterns whose minimal certificate fits in ``t``."""
    d = body.dim
    b = body._b
    if isinstance(ambient, Euclidean):
        cost, budget, agg = 1 / b ** 2, t ** 2, "sum"
    else:
        ps = ambient.dual_exponent
        c = 1 / (b * np.asarray(ambient.w))
        if math.isinf(ps):
            cost, budget, agg = c, t, "max"
        else:
            cost, budget, agg = c ** ps, t ** ps, "sum"
    out = np.zeros((n, d))
    for r in range(n):
        # half the patterns favour the large semiaxes
        keys = rng.random(d)
        if r % 2:
            keys = keys * (np.arange(1, d + 1) ** rng.uniform(0, 2))
        order = np.argsort(keys, kind="stable")
        if agg == "max":
            chosen = [i for i in order if cost[i] <= budget]
        else:
            chosen, used = [], 0.0
            for i in order:
                if used + cost[i] <= budget * (1 + 1e-12):
                    chosen.append(i)
                    used += cost[i]
        if not chosen:
            continue
        keep = max(1, int(math.ceil(len(chosen) * rng.random() ** 0.5)))
        idx = np.array(chosen[:keep])
        w = rng.exponential(1.0, size=len(idx))
        out[r, idx] = rng.choice([-1.0, 1.0], size=len(idx)) * w / w.sum() * b[idx]
    return out


def _proposals(body, ambient, t, rng, n):
    d = body.dim
    if isinstance(body, LqEllipsoid):
        k = np.ceil(d ** rng.random(n)).astype(int)
        v = rng.standard_normal((n, d))
        lam = 10.0 ** (-4 * rng.random(n))
        mask = np.arange(d)[None, :] >= k[:, None]
        v[mask] *= np.repeat(lam, d).reshape(n, d)[mask]
        return _normalise(body, v * body._b)
    if isinstance(body, EuclideanBall):
        return _normalise(body, rng.standard_normal((n, d)))
    if isinstance(body, Octahedron):
        return _normalise(body, _octahedron_fill(body, ambient, t, rng, n))
    if isinstance(body, PerturbedSimplex):
        w = np.zeros((n, d))
        kind = rng.integers(0, 3, size=n)
        for r in range(n):
            if kind[r] == 0:  # facet of the simplex
                w[r] = rng.exponential(1.0, size=d) * rng.choice([-1.0, 1.0])
            else:
                k = int(math.ceil(d ** rng.random()))
                idx = rng.choice(d, size=k, replace=False)
                s = rng.choice([-1.0, 1.0], size=k) if kind[r] == 1 else rng.choice([-1.0, 1.0])
                w[r, idx] = rng.exponential(1.0, size=k) * s
        w /= np.sum(np.abs(w), axis=1, keepdims=True)
        return w @ body.matrix.T
    if isinstance(body, AbsConvPolytope):
        m = len(body.vertices)
        lam = np.zeros((n, m))
        for r in range(n):
            k = int(math.ceil(m ** rng.random()))
            idx = rng.choice(m, size=k, replace=False)
            lam[r, idx] = rng.exponential(1.0, size=k) * rng.choice([-1.0, 1.0], size=k)
        return _normalise(body, lam @ body.matrix.T)
    raise TypeError(f"unsupported body {type(body).__name__}")


def sample_bt(body, ambient, t, count, seed, boundary_fraction=0.7, max_rounds=40):
    """Up to ``count`` points of ``B_t`` (verified through the membership threshold).

    Proposals are drawn on the boundary of ``B`` from body-specific
    distributions concentrated where thin sets live (leading semiaxes,
    sparse supports, simplex facets) and rejected unless ``tau <= t``.
    Since ``B_t`` is a cone intersected with ``B``, a fraction of the
    accepted boundary points is then scaled radially inward.  May return
    fewer than ``count`` points (possibly none) when ``B_t`` is thin.
    """
    rng = np.random.default_rng(seed)
    d = body.dim
    accepted = []
    have = 0
    batch = max(64, 2 * count)
    for _ in range(max_rounds):
        if have >= count:
            break
        prop = _proposals(body, ambient, t, rng, batch)
        if len(prop) == 0:
            continue
        tau = membership_threshold(body, ambient, prop)
        ok = prop[tau <= t * (1 + 1e-9)]
        accepted.append(ok)
        have += len(ok)
    if not have:
        return np.zeros((0, d))
    pts = np.vstack(accepted)[:count]
    inner = rng.random(len(pts)) >= boundary_fraction
    pts[inner] *= rng.random((int(inner.sum()), 1)) ** (1.0 / d)
    return pts
