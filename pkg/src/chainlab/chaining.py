"""Chaining bounds and the geometric checks behind them.

Everything here works on point clouds of a body ``B`` and of its thin
subsets ``B_t`` (points of ``B`` whose minimal subgradient has ambient dual
norm at most ``t``).  Since ``y -> tau(y)`` is scale invariant, a pool of
points sorted by ``tau`` yields every ``B_t`` cloud as a prefix, so the
clouds are nested exactly as the sets are.

Sums over ``n`` are split into an explicit part (``n <= n_max``, measured
brackets) and a volumetric tail; both are reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bodies import (
    AbsConvPolytope,
    Euclidean,
    EuclideanBall,
    LqEllipsoid,
    Octahedron,
    PerturbedSimplex,
    WeightedLp,
    max_ambient_norm,
    sample_cloud,
)
from .entropy import (
    EntropyProfile,
    cardinality_bound,
    entropy_profile,
    greedy_cover,
    nearest,
    TailModel,
    tail_sum,
    volumetric_tail,
)
from .kfun import bt_member, membership_threshold, sample_bt

__all__ = [
    "EntropyProfile",
    "BtPool",
    "build_pool",
    "dudley_bound",
    "qconvex_bound",
    "trivial_lower_bound",
    "interpolation_bound",
    "default_a_grid",
    "AdmissibleSequence",
    "build_admissible_sequence",
    "gamma_value",
    "regularized_profile",
    "contraction_check",
    "qconvexity_modulus",
    "unconditional_assumption_check",
    "counterexample_check",
]


# ---------------------------------------------------------------------------
# Pools of B_t clouds
# ---------------------------------------------------------------------------


@dataclass
class BtPool:
    """Points of ``B`` sorted by membership threshold."""

    body: object
    ambient: object
    points: np.ndarray
    tau: np.ndarray
    diam: float
    seed: int = 0
    tail_model: TailModel = None

    @property
    def dim(self):
        return self.points.shape[1]

    def tail(self, n):
        if self.tail_model is not None:
            return self.tail_model(n)
        return volumetric_tail(self.dim, self.diam, n)

    def count(self, t):
        return int(np.searchsorted(self.tau, t * (1 + 1e-9), side="right"))

    def cloud(self, t):
        """The ``B_t`` cloud (always contains the origin)."""
        return self.points[: self.count(t)]

    def profile(self, n_max=4, rounds=30):
        """Entropy profile of the whole pool (memoized)."""
        cache = self.__dict__.setdefault("_profiles", {})
        if (n_max, rounds) not in cache:
            cache[n_max, rounds] = entropy_profile(
                self.points, n_max, self.ambient, dim=self.dim, diam=self.diam, rounds=rounds,
                source=self.describe(), tail_model=self.tail_model)
        return cache[n_max, rounds]

    def describe(self):
        return {"body": self.body.to_dict(), "ambient": self.ambient.to_dict(),
                "size": len(self.points), "seed": self.seed}


def tail_model(body, ambient=Euclidean()):
    """Tail bounds for ``e_n(B)`` beyond the explicit levels.

    Coordinate-aligned bodies get one entry per number ``k`` of leading
    coordinates (in order of decreasing semiaxis); absolute convex hulls in
    Euclidean space also get the empirical-average bound.
    """
    d = body.dim
    diam = 2.0 * max_ambient_norm(body, ambient)
    euclid = isinstance(ambient, Euclidean)
    if isinstance(body, (AbsConvPolytope, PerturbedSimplex)) and euclid:
        R = float(np.max(np.linalg.norm(np.asarray(body.extremes()), axis=1)))
        m = len(body.extremes()) // 2
        return TailModel((d,), (diam,), (0.0,), (m,), (R,))
    if not isinstance(body, (LqEllipsoid, Octahedron)):
        return TailModel.volumetric(d, diam)
    b = np.asarray(body.b, dtype=float)
    order = np.argsort(-b, kind="stable")

    def radius(idx):
        sub_b = tuple(b[idx])
        sub = LqEllipsoid(body.q, sub_b) if isinstance(body, LqEllipsoid) else Octahedron(sub_b)
        amb = ambient
        if isinstance(ambient, WeightedLp):
            amb = WeightedLp(ambient.p, tuple(np.asarray(ambient.w)[idx]))
        return max_ambient_norm(sub, amb)

    dims = tuple(range(1, d + 1))
    diams = tuple(2.0 * radius(order[:k]) for k in dims)
    radii = tuple(radius(order[k:]) for k in range(1, d)) + (0.0,)
    if isinstance(body, Octahedron) and euclid:
        return TailModel(dims, diams, radii, dims, tuple(v / 2 for v in diams))
    return TailModel(dims, diams, radii)


def build_pool(body, ambient=Euclidean(), size=6000, seed=0, ladder=16, extra_t=()):
    """Pool of ``B`` points rich in every ``B_t``.

    Composition: extreme points, the origin, 30% boundary and 20% uniform
    samples of ``B``, and the rest targeted ``B_t`` samples on a geometric
    ladder of ``t`` spanning the thresholds seen in the base samples (plus
    any ``extra_t``).
    """
    d = body.dim
    ext = np.asarray(body.extremes(), dtype=float)
    base = [ext, np.zeros((1, d)),
            sample_cloud(body, int(0.3 * size), seed, "boundary"),
            sample_cloud(body, int(0.2 * size), seed + 1, "interior")]
    pts = np.vstack(base)
    tau = membership_threshold(body, ambient, pts)
    pos = tau[tau > 0]
    ts = list(np.geomspace(pos.min(), pos.max(), ladder)) if len(pos) else []
    ts += [float(t) for t in extra_t if t > 0]
    remaining = max(0, size - len(pts))
    per = max(1, remaining // max(1, len(ts)))
    extra = [sample_bt(body, ambient, t, per, [seed, 7, j]) for j, t in enumerate(ts)]
    extra = [e for e in extra if len(e)]
    if extra:
        more = np.vstack(extra)
        pts = np.vstack([pts, more])
        tau = np.concatenate([tau, membership_threshold(body, ambient, more)])
    order = np.argsort(tau, kind="stable")
    diam = 2.0 * max_ambient_norm(body, ambient)
    return BtPool(body, ambient, pts[order], tau[order], diam, seed, tail_model(body, ambient))


# ---------------------------------------------------------------------------
# Bounds from entropy profiles
# ---------------------------------------------------------------------------


def _tail(profile, weight):
    if profile.dim is None:
        return 0.0
    return tail_sum(weight, profile.tail, profile.n_max + 1)


def dudley_bound(profile, p=2.0, tail=True):
    """``sum_n 2^(n/p) e_n`` on upper brackets, plus the volumetric tail."""
    if not profile.brackets:
        raise ValueError("empty profile")
    w = lambda n: 2.0 ** (n / p)
    head = sum(w(n) * b.upper for n, b in enumerate(profile.brackets))
    return head + (_tail(profile, w) if tail else 0.0)


def qconvex_bound(profile, p=2.0, q=2.0, tail=True):
    """``[sum_n (2^(n/p) e_n)^(q/(q-1))]^((q-1)/q)`` on upper brackets plus tail."""
    if q <= 1:
        raise ValueError("q must be > 1")
    r = q / (q - 1)
    terms = [(2.0 ** (n / p) * b.upper) for n, b in enumerate(profile.brackets)]
    top = max(terms + [0.0])
    if tail and profile.dim is not None:
        tail_terms = []
        n = profile.n_max + 1
        while True:
            v = 2.0 ** (n / p) * profile.tail(n)
            tail_terms.append(v)
            if v <= 1e-18 * max(top, 1e-300) and n > profile.n_max + 2:
                break
            n += 1
            if n > profile.n_max + 4096:
                raise AssertionError("tail series does not converge")
        terms += tail_terms
        top = max(terms)
    if top == 0:
        return 0.0
    # factor the largest term out to keep huge exponents finite
    s = sum((v / top) ** r for v in terms)
    return top * s ** (1 / r)


def trivial_lower_bound(profile, p=2.0):
    """``sup_n 2^(n/p) e_n`` on lower brackets (certified)."""
    return max(2.0 ** (n / p) * b.lower for n, b in enumerate(profile.brackets))


# ---------------------------------------------------------------------------
# Interpolation bound
# ---------------------------------------------------------------------------


def default_a_grid(diam, count=25):
    return np.geomspace(1e-3, 1e3, count) / diam


@dataclass
class InterpolationResult:
    value: float
    best_a: float
    truncated: float
    tail: float
    per_a: list
    levels: list

    def to_dict(self):
        return {
            "value": self.value,
            "best_a": self.best_a,
            "truncated": self.truncated,
            "tail": self.tail,
            "per_a": self.per_a,
            "levels": self.levels,
        }


def _level_upper(X, m, ambient, rounds, n):
    if len(X) <= m:
        return 0.0
    _, r = greedy_cover(X, m, ambient, rounds=rounds)
    if n == 0:
        r = min(r, float(np.max(ambient.norm(X))))
    return r


def interpolation_bound(body, ambient=Euclidean(), p=2.0, a_grid=None, n_max=4,
                        cloud_budget=6000, seed=0, pool=None, rounds=30):
    """``min_a 1/a + sum_n 2^(n/p) e_n(B_{a 2^(n/p)})`` over ``a_grid``.

    ``e_n`` is bounded above by greedy nets of the ``B_t`` clouds.  A net of
    a larger cloud also covers a smaller one, so upper brackets are made
    monotone in ``t``.  The tail uses the volumetric bound of ``B``, which
    dominates every ``B_t``.
    """
    if n_max > 4:
        raise ValueError("n_max must be <= 4")
    if pool is None:
        pool = build_pool(body, ambient, cloud_budget, seed)
    a_grid = default_a_grid(pool.diam) if a_grid is None else np.asarray(a_grid, dtype=float)
    if len(a_grid) == 0 or np.any(a_grid <= 0):
        raise ValueError("a_grid must be nonempty and positive")
    w = lambda n: 2.0 ** (n / p)
    uppers = {}
    for n in range(n_max + 1):
        m = cardinality_bound(n)
        ks = sorted({pool.count(a * w(n)) for a in a_grid}, reverse=True)
        best = math.inf
        for k in ks:
            val = _level_upper(pool.points[:k], m, ambient, rounds, n)
            best = min(best, val)
            uppers[n, k] = best
    tail = tail_sum(w, pool.tail, n_max + 1)
    per_a, best_i = [], 0
    for i, a in enumerate(a_grid):
        head = 1.0 / a + sum(w(n) * uppers[n, pool.count(a * w(n))] for n in range(n_max + 1))
        per_a.append({"a": float(a), "truncated": float(head)})
        if head < per_a[best_i]["truncated"]:
            best_i = i
    a = float(a_grid[best_i])
    levels = []
    for n in range(n_max + 1):
        t = a * w(n)
        k = pool.count(t)
        levels.append({"n": n, "t": t, "cloud_size": k, "upper": uppers[n, k]})
    trunc = per_a[best_i]["truncated"]
    return InterpolationResult(float(trunc + tail), a, trunc, float(tail), per_a, levels)


# ---------------------------------------------------------------------------
# Admissible sequences
# ---------------------------------------------------------------------------


@dataclass
class AdmissibleSequence:
    levels: list
    p: float
    a: float
    dim: int = None
    diam: float = None
    tail_model: TailModel = None

    def __post_init__(self):
        if len(self.levels[0]) != 1:
            raise ValueError("level 0 must have exactly one point")
        for n, T in enumerate(self.levels):
            if len(T) == 0:
                raise ValueError(f"level {n} is empty")
            if len(T) > cardinality_bound(n):
                raise ValueError(f"level {n} has {len(T)} points")

    @property
    def n_max(self):
        return len(self.levels) - 1

    def tail(self, n):
        if self.dim is None or self.diam is None:
            return 0.0
        if self.tail_model is not None:
            return self.tail_model(n)
        return volumetric_tail(self.dim, self.diam, n)

    def to_dict(self):
        return {"p": self.p, "a": self.a, "dim": self.dim, "diam": self.diam,
                "levels": [np.asarray(T).tolist() for T in self.levels]}


def build_admissible_sequence(body, ambient=Euclidean(), p=2.0, a=1.0, n_max=4, pool=None,
                              cloud_budget=6000, seed=0, rounds=30):
    """Level ``n`` is a greedy net of the ``B_{a 2^(n/p)}`` cloud; level 0 is ``{0}``.

    Net points are convex combinations of points of ``B``; any gauge
    excess from rounding is clipped back onto ``B``.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    if pool is None:
        pool = build_pool(body, ambient, cloud_budget, seed)
    levels = [np.zeros((1, pool.dim))]
    for n in range(1, n_max + 1):
        X = pool.cloud(a * 2.0 ** (n / p))
        m = cardinality_bound(n)
        net = X.copy() if len(X) <= m else greedy_cover(X, m, ambient, rounds=rounds)[0]
        g = np.asarray(body.gauge(net), dtype=float)
        over = g > 1
        net[over] /= g[over, None]
        levels.append(net)
    return AdmissibleSequence(levels, p, a, pool.dim, pool.diam, pool.tail_model)


def gamma_value(seq, test_cloud, p=None, ambient=Euclidean()):
    """``sup_x sum_n 2^(n/p) d(x, T_n)`` over the cloud, plus ``2 sum_{n>n_max} 2^(n/p) tail(n)``."""
    p = seq.p if p is None else p
    X = np.asarray(getattr(test_cloud, "points", test_cloud), dtype=float)
    if X.ndim != 2 or X.shape[1] != seq.levels[0].shape[1]:
        raise ValueError("dimension mismatch")
    total = np.zeros(len(X))
    for n, T in enumerate(seq.levels):
        total += 2.0 ** (n / p) * nearest(X, T, ambient)[1]
    w = lambda n: 2.0 ** (n / p)
    tail = 2.0 * tail_sum(w, seq.tail, seq.n_max + 1) if seq.dim is not None else 0.0
    return float(total.max()) + tail


# ---------------------------------------------------------------------------
# Regularized entropy numbers and the contraction check
# ---------------------------------------------------------------------------


def regularized_profile(profile, lam):
    """``d_n = max_{k <= n} 2^(lam (k - n)) e_k`` on upper brackets."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    e = profile.upper if isinstance(profile, EntropyProfile) else np.asarray(profile, dtype=float)
    out = []
    for n, v in enumerate(e):
        out.append(v if n == 0 else max(v, 2.0 ** (-lam) * out[-1]))
    return out


def default_lambda(p, q):
    return 2 * q / ((q - 1) * p)


def _pair_indices(N, count, rng):
    i = rng.integers(0, N, size=count)
    j = rng.integers(0, N, size=count)
    keep = i != j
    return i[keep], j[keep]


def contraction_check(body, ambient=Euclidean(), q=2.0, t_list=(0.5, 1, 2, 4), n_max=2,
                      pool=None, pairs=20000, seed=0, slack=0.5, rounds=30, pool_size=6000):
    """Measure both sides of the entropy contraction inequality.

    ``K`` is the empirical max of ``||y - z||_B^q / (t ||y - z||)`` over
    sampled pairs of the ``B_t`` cloud, inflated by 10%.  For ``n <= n_max``
    the check is ``upper_{n+1}(B_t) <= (K t upper_n(B_t))^(1/q) upper_n(B) (1 + slack)``.
    """
    if q <= 1:
        raise ValueError("q must be > 1")
    if pool is None:
        pool = build_pool(body, ambient, pool_size, seed, extra_t=t_list)
    full = pool.profile(n_max, rounds)
    rng = np.random.default_rng([seed, 11])
    rows, notices = [], []
    for t in t_list:
        X = pool.cloud(t) if t > 0 else np.zeros((1, pool.dim))
        if t <= 0 or len(X) < 2:
            notices.append(f"t={t}: B_t cloud has {len(X)} point(s); inequality trivial")
            rows += [{"t": t, "n": n, "lhs": 0.0, "rhs": 0.0, "margin": 0.0, "ok": True,
                      "K": None, "cloud_size": len(X)} for n in range(n_max + 1)]
            continue
        i, j = _pair_indices(len(X), pairs, rng)
        diff = X[i] - X[j]
        amb = ambient.norm(diff)
        ok = amb > 0
        K = 1.1 * float(np.max(body.gauge(diff[ok]) ** q / (t * amb[ok])))
        sub = entropy_profile(X, n_max + 1, ambient, rounds=rounds)
        for n in range(n_max + 1):
            lhs = sub.brackets[n + 1].upper
            rhs = (K * t * sub.brackets[n].upper) ** (1 / q) * full.brackets[n].upper
            rhs *= 1 + slack
            rows.append({"t": t, "n": n, "lhs": lhs, "rhs": rhs, "margin": rhs - lhs,
                         "ok": bool(lhs <= rhs), "K": K, "cloud_size": len(X)})
    return {"q": q, "rows": rows, "violations": sum(not r["ok"] for r in rows),
            "notices": notices, "body_upper": list(full.upper)}


# ---------------------------------------------------------------------------
# Uniform convexity and the unconditional assumption
# ---------------------------------------------------------------------------


def _body_exponent(body, q):
    if q is not None:
        return q
    if isinstance(body, LqEllipsoid):
        return max(body.q, 2.0)
    if isinstance(body, EuclideanBall):
        return 2.0
    raise ValueError("q required for this body")


def qconvexity_modulus(body, sample_pairs=10000, seed=0, q=None):
    """``min (1 - ||(x+y)/2||_B) / ||x - y||_B^q`` over sampled pairs of ``B``.

    Pairs mix uniform interior points, boundary points and nearby boundary
    pairs (where the modulus is attained for smooth bodies).
    """
    q = _body_exponent(body, q)
    rng = np.random.default_rng([seed, 13])
    k = sample_pairs // 3
    bnd = sample_cloud(body, 2 * k, [seed, 1], "boundary")
    inner = sample_cloud(body, 2 * k, [seed, 2], "interior")
    base = sample_cloud(body, sample_pairs - 2 * k, [seed, 3], "boundary")
    step = 10.0 ** rng.uniform(-3, 0, size=(len(base), 1))
    near = base + step * rng.standard_normal(base.shape) * np.asarray(body.extremes()).max()
    near /= np.maximum(np.asarray(body.gauge(near)), 1.0)[:, None]
    X = np.vstack([bnd[:k], inner[:k], base])
    Y = np.vstack([bnd[k:], inner[k:], near])
    dxy = np.asarray(body.gauge(X - Y), dtype=float)
    ok = dxy > 0
    mid = np.asarray(body.gauge((X[ok] + Y[ok]) / 2), dtype=float)
    return float(np.min((1 - mid) / dxy[ok] ** q))


def unconditional_assumption_check(q, weights, p_ambient=2.0, t_list=(1, 2), samples=10000,
                                   seed=0, tol=0.01):
    """Sampled ``max ||x - y||_q^q / (t ||x - y||)`` over pairs of ``B_t`` for the unit ``l_q`` ball.

    The ambient norm is the weighted ``l_p`` norm with the given weights.
    The reference constant is ``2^(1 + (q-2)_+)``.  Antipodal pairs
    ``(x, -x)`` and scaled coordinate vectors are always included.
    """
    if q <= 1:
        raise ValueError("q must be > 1")
    w = tuple(float(v) for v in weights)
    if any(v <= 0 for v in w):
        raise ValueError("weights must be positive")
    d = len(w)
    body = LqEllipsoid(q, (1.0,) * d)
    ambient = WeightedLp(p_ambient, w)
    bound = 2.0 ** (1 + max(q - 2, 0.0))
    rng = np.random.default_rng([seed, 17])
    rows = []
    for j, t in enumerate(t_list):
        if t <= 0:
            continue
        pts = sample_bt(body, ambient, t, samples, [seed, 19, j])
        axes = np.vstack([np.eye(d) * s for s in (1.0, 0.5, 0.25)])
        tau = membership_threshold(body, ambient, axes)
        pts = np.vstack([pts, axes[tau <= t * (1 + 1e-9)]])
        i, k = _pair_indices(len(pts), samples, rng)
        X = np.vstack([pts[i], pts])
        Y = np.vstack([pts[k], -pts])
        diff = X - Y
        amb = ambient.norm(diff)
        ok = amb > 0
        ratio = np.linalg.norm(diff[ok], ord=q, axis=1) ** q / (t * amb[ok])
        top = float(ratio.max())
        rows.append({"t": t, "ratio": top, "bound": bound, "points": len(pts),
                     "ok": bool(top <= bound * (1 + tol))})
    return {"q": q, "weights": list(w), "p_ambient": p_ambient, "bound": bound, "rows": rows,
            "ok": all(r["ok"] for r in rows)}


# ---------------------------------------------------------------------------
# Perturbed simplex
# ---------------------------------------------------------------------------


def _simplex_combinations(d, count, rng):
    """Vertices, pairwise midpoints and sparse/dense random convex weights."""
    rows = [np.eye(d)]
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    take = min(len(pairs), count // 4)
    sel = rng.choice(len(pairs), size=take, replace=False) if take else []
    mid = np.zeros((take, d))
    for r, s in enumerate(sel):
        i, j = pairs[s]
        mid[r, [i, j]] = 0.5
    rows.append(mid)
    rest = max(0, count - d - take)
    lam = np.zeros((rest, d))
    for r in range(rest):
        k = int(math.ceil(d ** rng.random()))
        idx = rng.choice(d, size=k, replace=False)
        lam[r, idx] = rng.exponential(1.0, size=k)
    lam /= np.maximum(lam.sum(axis=1, keepdims=True), 1e-300)
    rows.append(lam)
    out = np.vstack(rows)
    return out[out.sum(axis=1) > 0]


def counterexample_check(d, eps, t=None, grid=1000, seed=0, diagnostic_levels=3,
                         diagnostic_size=4000):
    """Verify the sign-vector certificate that puts ``conv{x_i}`` inside ``B_t``.

    ``x_i = e_i + eps u`` with ``u = d^(-1/2) 1``.  The witness
    ``v = u / (t (eps + d^(-1/2)))`` satisfies ``t V^T v = 1``, so for every
    convex combination ``x`` the subgradient ``V^(-T) 1 = t v`` has norm
    ``||t v|| <= t`` whenever ``t >= 1/eps``.  Also reports lower brackets
    of the simplex entropy numbers against ``2^(-n/2) sqrt(log d)``.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    t = 1.0 / eps if t is None else float(t)
    body = PerturbedSimplex(d, eps)
    guarantee = t >= 1.0 / eps
    u = body.u
    v = u / (t * (eps + d ** -0.5))
    v_norm = float(np.linalg.norm(v))
    V = body.matrix
    witness_residual = float(np.max(np.abs(t * V.T @ v - 1.0)))
    rng = np.random.default_rng([seed, 23])
    lam = _simplex_combinations(d, grid, rng)
    X = lam @ V.T
    W = body.coords(X)
    coord_residual = float(max(0.0, -W.min()))
    z = body.inv_transpose(np.ones(d))
    cert_residual = float(np.max(np.abs(z - t * v)))
    members = [bool(bt_member(body, Euclidean(), t, x)) for x in X]
    residual = max(witness_residual, coord_residual, cert_residual, max(0.0, v_norm - 1.0))
    passed = bool(all(members) and residual <= 1e-9) if guarantee else None

    cloud = np.vstack([np.eye(d), _simplex_combinations(d, diagnostic_size, rng)])
    prof = entropy_profile(cloud, diagnostic_levels, Euclidean())
    ref = [2.0 ** (-n / 2) * math.sqrt(math.log(d)) for n in range(diagnostic_levels + 1)]
    return {
        "d": d,
        "eps": eps,
        "t": t,
        "guarantee": bool(guarantee),
        "status": "checked" if guarantee else "no guarantee",
        "passed": passed,
        "tested": int(len(X)),
        "members": int(sum(members)),
        "v_norm": v_norm,
        "residual": residual,
        "simplex_lower": list(prof.lower),
        "simplex_reference": ref,
        "simplex_ratio": [lo / r for lo, r in zip(prof.lower, ref)],
    }
