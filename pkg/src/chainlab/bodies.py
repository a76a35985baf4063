"""Symmetric convex bodies in R^d and the ambient norms used to measure them.

Every body exposes its gauge (Minkowski functional), its support function
(dual gauge), a subgradient selection and a seeded point sampler.  All
functions accept either a single point of shape ``(d,)`` or a batch of
shape ``(N, d)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np
from scipy.optimize import linprog, lsq_linear

MAX_DIM = 4096


class DimensionError(ValueError):
    """Raised when a point does not live in the body's space."""


class NotDifferentiableError(ValueError):
    pass


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d or x.ndim not in (1, 2):
        raise DimensionError(f"expected points of dimension {d}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("point coordinates must be finite")
    return x


def _check_weights(b, name="b"):
    b = tuple(float(v) for v in b)
    if not b:
        raise ValueError(f"{name} must be nonempty")
    if len(b) > MAX_DIM:
        raise ValueError(f"dimension {len(b)} exceeds cap {MAX_DIM}")
    if any(not (v > 0 and math.isfinite(v)) for v in b):
        raise ValueError(f"{name} must be strictly positive and finite")
    return b


def lp_norm(x, p=2.0):
    """``l_p`` norm along the last axis, rescaled by the max entry so tiny inputs do not underflow."""
    a = np.abs(np.asarray(x, dtype=float))
    m = np.max(a, axis=-1, keepdims=True)
    if math.isinf(p):
        return m[..., 0]
    safe = np.where(m > 0, m, 1.0)
    return (m * np.linalg.norm(a / safe, ord=p, axis=-1, keepdims=True))[..., 0]


def sign0(x):
    """Entrywise sign with the convention sign(0) = 1."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


# ---------------------------------------------------------------------------
# Ambient norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Euclidean:
    """The standard l2 norm.  Self-dual."""

    kind = "euclidean"

    def norm(self, x):
        return lp_norm(x)

    def dual_norm(self, z):
        return self.norm(z)

    @property
    def dual(self):
        return self

    def dual_witness(self, z):
        """Unit-norm x with <z, x> = ||z||_*."""
        z = np.asarray(z, dtype=float)
        n = self.norm(z)
        return z / n if n > 0 else np.zeros_like(z)

    def to_dict(self):
        return {"kind": self.kind, "params": {}}


@dataclass(frozen=True)
class WeightedLp:
    """``||x|| = (sum_i |w_i x_i|^p)^(1/p)``, ``p`` in [1, inf].

    The dual norm is ``WeightedLp(p*, 1/w)``; coordinate-weighted norms are
    unconditional with constant 1.
    """

    p: float
    w: tuple

    kind = "weighted_lp"

    def __post_init__(self):
        object.__setattr__(self, "w", _check_weights(self.w, "w"))
        p = float(self.p)
        if not (p >= 1):
            raise ValueError("p must lie in [1, inf]")
        object.__setattr__(self, "p", p)

    @property
    def dual_exponent(self):
        if self.p == 1:
            return math.inf
        if math.isinf(self.p):
            return 1.0
        return self.p / (self.p - 1)

    @property
    def dual(self):
        return WeightedLp(self.dual_exponent, tuple(1.0 / v for v in self.w))

    @cached_property
    def _w(self):
        return np.asarray(self.w)

    def norm(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != len(self.w):
            raise DimensionError("weight/point dimension mismatch")
        return lp_norm(self._w * x, self.p)

    def dual_norm(self, z):
        return self.dual.norm(z)

    def dual_witness(self, z):
        """Point x with ||x|| = 1 attaining <z, x> = ||z||_* (Hoelder equality)."""
        z = np.asarray(z, dtype=float)
        nz = self.dual_norm(z)
        if nz == 0:
            return np.zeros_like(z)
        v = z / self._w  # dual coordinates
        ps = self.dual_exponent
        if math.isinf(ps):  # p == 1: put all mass on a largest |v_i|
            i = int(np.argmax(np.abs(v)))
            x = np.zeros_like(z)
            x[i] = np.sign(v[i]) / self._w[i]
            return x
        if ps == 1:  # p == inf
            return np.sign(v) / self._w
        u = np.sign(v) * (np.abs(v) / nz) ** (ps - 1)
        return u / self._w

    def to_dict(self):
        p = "inf" if math.isinf(self.p) else self.p
        return {"kind": self.kind, "params": {"p": p, "w": list(self.w)}}


AmbientNorm = Union[Euclidean, WeightedLp]


# ---------------------------------------------------------------------------
# Bodies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LqEllipsoid:
    """``||x||_B = (sum_i (|x_i| / b_i)^q)^(1/q)`` with ``q > 1``."""

    q: float
    b: tuple

    kind = "lq_ellipsoid"
    smooth = True

    def __post_init__(self):
        object.__setattr__(self, "b", _check_weights(self.b))
        if not float(self.q) > 1:
            raise ValueError("q must exceed 1")
        object.__setattr__(self, "q", float(self.q))
        if any(x < y for x, y in zip(self.b, self.b[1:])):
            raise ValueError("semiaxes b must be nonincreasing")

    @property
    def dim(self):
        return len(self.b)

    @cached_property
    def _b(self):
        return np.asarray(self.b)

    @property
    def dual_exponent(self):
        return self.q / (self.q - 1)

    def gauge(self, x):
        x = _as_points(x, self.dim)
        return lp_norm(x / self._b, self.q)

    def dual_gauge(self, z):
        z = _as_points(z, self.dim)
        return lp_norm(z * self._b, self.dual_exponent)

    def gradient(self, y):
        y = _as_points(y, self.dim)
        v = np.abs(y) / self._b
        m = np.max(v, axis=-1, keepdims=True)
        if np.any(m == 0):
            raise NotDifferentiableError("gauge not differentiable at origin")
        # the gradient is 0-homogeneous; normalise first to avoid underflow
        v = v / m
        g = np.expand_dims(lp_norm(v, self.q), -1)
        return np.sign(y) * (v / g) ** (self.q - 1) / self._b

    def extremes(self):
        e = np.diag(self._b)
        return np.vstack([e, -e])

    def to_dict(self):
        return {"kind": self.kind, "params": {"q": self.q, "b": list(self.b)}}


@dataclass(frozen=True)
class Octahedron:
    """``absconv{b_i e_i}``: gauge is the weighted l1 norm ``sum |x_i| / b_i``."""

    b: tuple

    kind = "octahedron"
    smooth = False

    def __post_init__(self):
        object.__setattr__(self, "b", _check_weights(self.b))
        if any(x < y for x, y in zip(self.b, self.b[1:])):
            raise ValueError("b must be nonincreasing")

    @property
    def dim(self):
        return len(self.b)

    @cached_property
    def _b(self):
        return np.asarray(self.b)

    def gauge(self, x):
        x = _as_points(x, self.dim)
        return np.sum(np.abs(x) / self._b, axis=-1)

    def dual_gauge(self, z):
        z = _as_points(z, self.dim)
        return np.max(np.abs(z) * self._b, axis=-1)

    def extremes(self):
        e = np.diag(self._b)
        return np.vstack([e, -e])

    def to_dict(self):
        return {"kind": self.kind, "params": {"b": list(self.b)}}


@dataclass(frozen=True)
class EuclideanBall:
    radius: float
    dim: int

    kind = "euclidean_ball"
    smooth = True

    def __post_init__(self):
        if not (float(self.radius) > 0):
            raise ValueError("radius must be positive")
        if not (1 <= int(self.dim) <= MAX_DIM):
            raise ValueError("dim out of range")
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "dim", int(self.dim))

    def gauge(self, x):
        x = _as_points(x, self.dim)
        return lp_norm(x) / self.radius

    def dual_gauge(self, z):
        z = _as_points(z, self.dim)
        return self.radius * lp_norm(z)

    def gradient(self, y):
        y = _as_points(y, self.dim)
        n = np.expand_dims(lp_norm(y), -1)
        if np.any(n == 0):
            raise NotDifferentiableError("gauge not differentiable at origin")
        return y / (n * self.radius)

    def extremes(self):
        e = self.radius * np.eye(self.dim)
        return np.vstack([e, -e])

    def to_dict(self):
        return {"kind": self.kind, "params": {"radius": self.radius, "dim": self.dim}}


@dataclass(frozen=True)
class AbsConvPolytope:
    """Absolute convex hull of finitely many vertices.

    The gauge is the value of ``min ||lambda||_1 s.t. V lambda = x`` and is
    ``inf`` for points outside the span of the vertices.
    """

    vertices: tuple

    kind = "absconv_polytope"
    smooth = False

    def __post_init__(self):
        verts = tuple(tuple(float(c) for c in v) for v in self.vertices)
        if not verts:
            raise ValueError("need at least one vertex")
        d = len(verts[0])
        if d == 0 or d > MAX_DIM or any(len(v) != d for v in verts):
            raise ValueError("vertices must share one dimension")
        object.__setattr__(self, "vertices", verts)

    @property
    def dim(self):
        return len(self.vertices[0])

    @cached_property
    def matrix(self):
        """``d x m`` matrix whose columns are the vertices."""
        return np.asarray(self.vertices).T

    def _gauge_one(self, x):
        V = self.matrix
        m = V.shape[1]
        if not np.any(x):
            return 0.0
        res = linprog(
            np.ones(2 * m), A_eq=np.hstack([V, -V]), b_eq=x,
            bounds=(0, None), method="highs",
            options={"primal_feasibility_tolerance": 1e-9},
        )
        if res.status == 2:
            return math.inf
        if res.status != 0:
            raise RuntimeError(f"gauge LP failed: {res.message}")
        return float(res.fun)

    def gauge(self, x):
        x = _as_points(x, self.dim)
        if x.ndim == 1:
            return self._gauge_one(x)
        return np.array([self._gauge_one(row) for row in x])

    def dual_gauge(self, z):
        z = _as_points(z, self.dim)
        return np.max(np.abs(z @ self.matrix), axis=-1)

    def extremes(self):
        V = self.matrix.T
        return np.vstack([V, -V])

    def to_dict(self):
        return {"kind": self.kind, "params": {"vertices": [list(v) for v in self.vertices]}}


@dataclass(frozen=True)
class PerturbedSimplex:
    """``absconv{e_i + eps u}`` with ``u = d^{-1/2}(1, ..., 1)``.

    With ``V`` the matrix of vertices as columns, ``||x||_B = ||V^{-1} x||_1``.
    """

    d: int
    eps: float

    kind = "perturbed_simplex"
    smooth = False

    def __post_init__(self):
        if not (2 <= int(self.d) <= MAX_DIM):
            raise ValueError("d must be an integer >= 2")
        if not (0 < float(self.eps) < 1):
            raise ValueError("eps must lie in (0, 1)")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "eps", float(self.eps))

    @property
    def dim(self):
        return self.d

    @cached_property
    def u(self):
        return np.full(self.d, self.d ** -0.5)

    @cached_property
    def matrix(self):
        V = np.eye(self.d) + self.eps * np.outer(self.u, np.ones(self.d))
        assert abs(np.linalg.det(V)) > 0, "singular vertex matrix"
        return V

    def coords(self, x):
        """``V^{-1} x`` by Sherman-Morrison (V = I + eps u 1^T)."""
        x = _as_points(x, self.d)
        s = np.sum(x, axis=-1, keepdims=True)
        k = self.eps / (1 + self.eps * math.sqrt(self.d))
        return x - k * s * self.u

    def inv_transpose(self, s):
        """``V^{-T} s`` (V^T = I + eps 1 u^T)."""
        s = np.asarray(s, dtype=float)
        k = self.eps / (1 + self.eps * math.sqrt(self.d))
        return s - k * np.expand_dims(s @ self.u, -1)

    def gauge(self, x):
        return np.sum(np.abs(self.coords(x)), axis=-1)

    def dual_gauge(self, z):
        z = _as_points(z, self.d)
        return np.max(np.abs(z @ self.matrix), axis=-1)

    def vertex(self, i):
        return self.matrix[:, i].copy()

    def extremes(self):
        V = self.matrix.T
        return np.vstack([V, -V])

    def to_dict(self):
        return {"kind": self.kind, "params": {"d": self.d, "eps": self.eps}}


BodySpec = Union[LqEllipsoid, Octahedron, EuclideanBall, AbsConvPolytope, PerturbedSimplex]


# ---------------------------------------------------------------------------
# Module-level operations
# ---------------------------------------------------------------------------


def gauge(body, x):
    """Minkowski functional ``inf{s >= 0 : x in sB}``."""
    return body.gauge(x)


def dual_gauge(body, z):
    """Support function ``sup_{x in B} <z, x>``."""
    return body.dual_gauge(z)


def gauge_subgradient(body, y, ambient=Euclidean()):
    """Return ``(z, ||z||_*)`` with ``z`` in the subdifferential of the gauge at ``y``.

    ``z`` satisfies ``<z, y> = ||y||_B`` and ``||z||_B^* <= 1``.  Among such
    certificates one of smallest ambient dual norm is returned: the gradient
    for smooth bodies, free coordinates set to zero for octahedra (optimal
    for any coordinate-monotone dual norm), and ``V^{-T} sign(V^{-1} y)``
    with ``sign(0) = 1`` for the perturbed simplex.  General polytopes solve
    the minimal-norm certificate program.
    """
    y = _as_points(y, body.dim)
    if y.ndim != 1:
        raise ValueError("gauge_subgradient expects a single point")
    if isinstance(body, (LqEllipsoid, EuclideanBall)):
        z = body.gradient(y)
    elif isinstance(body, Octahedron):
        z = np.where(y != 0, np.sign(y), 0.0) / body._b
    elif isinstance(body, PerturbedSimplex):
        z = body.inv_transpose(sign0(body.coords(y)))
    elif isinstance(body, AbsConvPolytope):
        z = polytope_min_certificate(body, y, ambient)
    else:
        raise TypeError(f"unsupported body {type(body).__name__}")
    return z, float(ambient.dual_norm(z))


def polytope_min_certificate(body, y, ambient):
    """Minimal ambient-dual-norm element of the gauge subdifferential at ``y``.

    Feasibility program over ``{z : |<z, v_j>| <= 1, <z, y> = ||y||_B}``.
    """
    import cvxpy as cp

    V = body.matrix
    d = V.shape[0]
    gy = float(body.gauge(y))
    z = cp.Variable(d)
    cons = [cp.abs(V.T @ z) <= 1]
    if gy > 0:
        cons.append(y @ z == gy)
    obj = cp.Minimize(_cvx_norm(ambient.dual, z))
    prob = cp.Problem(obj, cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    if z.value is None:
        raise RuntimeError("certificate program failed")
    zv = np.asarray(z.value)
    # polish solver round-off back onto the constraint set
    if gy > 0:
        zv = zv + (gy - y @ zv) * y / (y @ y)
    return zv / max(1.0, float(np.max(np.abs(V.T @ zv))))


def perturbed_min_certificate(body, y, ambient=Euclidean()):
    """Exact minimal-norm certificate for the perturbed simplex.

    With ``w = V^{-1} y`` the subdifferential is ``V^{-T} s`` where
    ``s_i = sign(w_i)`` on the support and ``s_i`` ranges over ``[-1, 1]``
    off it.  Euclidean ambient uses bounded least squares; other norms fall
    back to the conic program.
    """
    w = body.coords(y)
    on = w != 0
    if np.all(on):
        return body.inv_transpose(np.sign(w))
    if not isinstance(ambient, Euclidean):
        return polytope_min_certificate(body, y, ambient)
    Minv = np.eye(body.d) - (body.eps / (1 + body.eps * math.sqrt(body.d))) * np.outer(
        np.ones(body.d), body.u
    )
    fixed = np.where(on, np.sign(w), 0.0)
    free = ~on
    res = lsq_linear(Minv[:, free], -Minv @ fixed, bounds=(-1, 1), tol=1e-12, method="bvls")
    s = fixed.copy()
    s[free] = res.x
    return body.inv_transpose(s)


def _cvx_norm(norm, z):
    import cvxpy as cp

    if isinstance(norm, Euclidean):
        return cp.norm(z, 2)
    w = np.asarray(norm.w)
    if math.isinf(norm.p):
        return cp.norm(cp.multiply(w, z), "inf")
    return cp.pnorm(cp.multiply(w, z), norm.p)


def _unit_gauge_directions(body, rng, count):
    """Gaussian directions pushed to the boundary of ``body``."""
    g = rng.standard_normal((count, body.dim))
    return g / np.expand_dims(np.asarray(body.gauge(g)), -1)


def _uniform_lq(rng, count, d, q):
    # Barthe-Guedon-Mendelson-Naor: uniform point of the unit l_q ball.
    y = rng.gamma(1.0 / q, 1.0, size=(count, d)) ** (1.0 / q)
    y *= rng.choice([-1.0, 1.0], size=(count, d))
    e = rng.exponential(1.0, size=(count, 1))
    return y / (np.sum(np.abs(y) ** q, axis=1, keepdims=True) + e) ** (1.0 / q)


def sample_cloud(body, count, seed, mode="interior"):
    """Deterministic sample of ``count`` points of ``body``.

    ``boundary`` normalises Gaussian directions to gauge 1.  ``interior``
    is uniform for ellipsoids, octahedra, balls and the perturbed simplex
    (linear images of uniform l_q balls) and a random absolute convex
    combination of vertices for general polytopes.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    d = body.dim
    if mode == "boundary":
        if isinstance(body, AbsConvPolytope):
            pts = _polytope_combinations(body, rng, count)
            g = np.asarray(body.gauge(pts))
            return pts / g[:, None]
        return _unit_gauge_directions(body, rng, count)
    if mode != "interior":
        raise ValueError(f"unknown mode {mode!r}")
    if isinstance(body, LqEllipsoid):
        return _uniform_lq(rng, count, d, body.q) * body._b
    if isinstance(body, Octahedron):
        return _uniform_lq(rng, count, d, 1.0) * body._b
    if isinstance(body, EuclideanBall):
        return _uniform_lq(rng, count, d, 2.0) * body.radius
    if isinstance(body, PerturbedSimplex):
        return _uniform_lq(rng, count, d, 1.0) @ body.matrix.T
    if isinstance(body, AbsConvPolytope):
        return _polytope_combinations(body, rng, count)
    raise TypeError(f"unsupported body {type(body).__name__}")


def _polytope_combinations(body, rng, count):
    m = len(body.vertices)
    lam = rng.exponential(1.0, size=(count, m)) * rng.choice([-1.0, 1.0], size=(count, m))
    lam /= np.sum(np.abs(lam), axis=1, keepdims=True)
    lam *= rng.uniform(0, 1, size=(count, 1)) ** (1.0 / body.dim)
    return lam @ body.matrix.T


def max_ambient_norm(body, ambient=Euclidean()):
    """``max_{x in B} ||x||``; exact for polytopes, balls and Euclidean ellipsoids."""
    if isinstance(body, (Octahedron, AbsConvPolytope, PerturbedSimplex)):
        return float(np.max(ambient.norm(body.extremes())))
    if isinstance(body, EuclideanBall) and isinstance(ambient, Euclidean):
        return body.radius
    if isinstance(body, LqEllipsoid) and isinstance(ambient, Euclidean):
        if body.q <= 2:
            return max(body.b)
        r = body.q / (body.q - 2)
        return float(np.linalg.norm(body._b ** 2, ord=r) ** 0.5)
    # Upper bound through the extreme coordinates of a box containing B.
    box = np.array([max_coordinate(body, i) for i in range(body.dim)])
    return float(ambient.norm(box))


def max_coordinate(body, i):
    e = np.zeros(body.dim)
    e[i] = 1.0
    return float(body.dual_gauge(e))


# ---------------------------------------------------------------------------
# JSON documents
# ---------------------------------------------------------------------------

_BODY_KINDS = {
    "lq_ellipsoid": lambda p: LqEllipsoid(q=p["q"], b=tuple(p["b"])),
    "octahedron": lambda p: Octahedron(b=tuple(p["b"])),
    "euclidean_ball": lambda p: EuclideanBall(radius=p["radius"], dim=p["dim"]),
    "absconv_polytope": lambda p: AbsConvPolytope(vertices=tuple(map(tuple, p["vertices"]))),
    "perturbed_simplex": lambda p: PerturbedSimplex(d=p["d"], eps=p["eps"]),
}


def body_from_dict(doc):
    try:
        return _BODY_KINDS[doc["kind"]](doc.get("params", {}))
    except KeyError as exc:
        raise ValueError(f"invalid body document: missing {exc}") from None


def ambient_from_dict(doc):
    kind = doc["kind"]
    if kind == "euclidean":
        return Euclidean()
    if kind == "weighted_lp":
        p = doc["params"]["p"]
        return WeightedLp(math.inf if p in ("inf", math.inf) else float(p), tuple(doc["params"]["w"]))
    raise ValueError(f"unknown ambient norm kind {kind!r}")


def dumps(obj):
    return json.dumps(obj.to_dict(), sort_keys=True)


def loads_body(text):
    return body_from_dict(json.loads(text))
