"""Two-sided numerical brackets on entropy numbers of point clouds.

``e_n(A)`` is the smallest radius at which ``A`` is covered by fewer than
``2^(2^n)`` balls.  Upper brackets come from explicit nets (farthest-point
traversal followed by a k-center refinement, centres allowed off the
cloud); lower brackets from packings of ``2^(2^n)`` points with pairwise
distances above twice the reported radius.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import gammaln

from .bodies import Euclidean, _uniform_lq

MAX_EXPLICIT_LEVEL = 4
_CHUNK = 4096
_TREE_MIN_CENTERS = 64
_TREE_MAX_DIM = 16


def cardinality_bound(n):
    """Largest admissible net size at level ``n``: ``2^(2^n) - 1``."""
    return 2 ** (2 ** n) - 1


@dataclass
class PointCloud:
    points: np.ndarray
    provenance: dict = field(default_factory=lambda: {"kind": "explicit"})

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or len(pts) == 0:
            raise ValueError("cloud must be a nonempty (N, d) array")
        self.points = pts

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return len(self.points)

    def scaled(self, s):
        return PointCloud(self.points * s, dict(self.provenance, scale=s))

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
        return cls(np.array(rows), {"kind": "csv", "path": str(path)})


@dataclass
class EntropyBracket:
    n: int
    lower: float
    upper: float
    cardinality_bound: int
    method: str
    net: np.ndarray = None
    resolution: float = 0.0

    @property
    def body_upper(self):
        """Upper bracket for the sampled body: cloud bracket plus resolution."""
        return self.upper + self.resolution

    def to_dict(self, with_net=False):
        out = {
            "n": self.n,
            "lower": self.lower,
            "upper": self.upper,
            "cardinality_bound": self.cardinality_bound,
            "method": self.method,
            "resolution": self.resolution,
        }
        if with_net and self.net is not None:
            out["net"] = self.net.tolist()
        return out


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------


def _dist_to_point(X, c, ambient):
    return ambient.norm(X - c)


def _minkowski(ambient, d):
    """Coordinate scaling and exponent turning the ambient norm into a Minkowski distance."""
    return np.asarray(getattr(ambient, "w", np.ones(d)), dtype=float), getattr(ambient, "p", 2.0)


def nearest(X, C, ambient):
    """Index of and distance to the nearest centre, for every row of ``X``.

    The returned distances are recomputed from coordinate differences, so
    ``max`` of them is a verified covering radius.
    """
    X = np.asarray(X, dtype=float)
    C = np.asarray(C, dtype=float)
    N = len(X)
    labels = np.empty(N, dtype=np.intp)
    if len(C) > _TREE_MIN_CENTERS and X.shape[1] <= _TREE_MAX_DIM:
        # weighted l_p distance is Minkowski-p distance after scaling by w
        w, p = _minkowski(ambient, X.shape[1])
        labels = cKDTree(C * w).query(X * w, p=p)[1]
    elif isinstance(ambient, Euclidean):
        cc = np.einsum("ij,ij->i", C, C)
        for s in range(0, N, _CHUNK):
            blk = X[s:s + _CHUNK]
            d2 = cc[None, :] - 2.0 * blk @ C.T
            labels[s:s + _CHUNK] = np.argmin(d2, axis=1)
    else:
        best = np.full(N, np.inf)
        for j, c in enumerate(C):
            dj = _dist_to_point(X, c, ambient)
            better = dj < best
            best[better] = dj[better]
            labels[better] = j
    dist = ambient.norm(X - C[labels])
    return labels, dist


def covering_radius(X, C, ambient):
    if len(C) == 0:
        return math.inf
    return float(np.max(nearest(X, C, ambient)[1]))


def _lex_first(X, idx):
    """Lexicographically smallest row among candidate indices."""
    if len(idx) == 1:
        return int(idx[0])
    sub = X[idx]
    order = np.lexsort(sub.T[::-1])
    return int(idx[order[0]])


def farthest_first(X, count, ambient, seed_centers=None):
    """Farthest-point traversal.

    Without seeds the first point is the ambient-norm-largest (ties broken
    lexicographically).  Returns ``(indices, mindist)`` where ``mindist`` is
    the distance of each point to the selected set (and seeds).
    """
    X = np.asarray(X, dtype=float)
    N = len(X)
    chosen = []
    if seed_centers is not None and len(seed_centers):
        mind = nearest(X, seed_centers, ambient)[1]
    else:
        norms = ambient.norm(X)
        first = _lex_first(X, np.flatnonzero(norms == norms.max()))
        chosen.append(first)
        mind = _dist_to_point(X, X[first], ambient)
    if count > _TREE_MIN_CENTERS and X.shape[1] <= _TREE_MAX_DIM:
        # only points closer to the new centre than the current maximum can change
        w, p = _minkowski(ambient, X.shape[1])
        Xw = X * w
        tree = cKDTree(Xw)
        while len(chosen) < count:
            top = mind.max()
            if top <= 0:
                break
            i = _lex_first(X, np.flatnonzero(mind == top))
            chosen.append(i)
            ids = np.asarray(tree.query_ball_point(Xw[i], r=top * (1 + 1e-9), p=p), dtype=np.intp)
            mind[ids] = np.minimum(mind[ids], _dist_to_point(X[ids], X[i], ambient))
        return np.array(chosen, dtype=np.intp), mind
    while len(chosen) < count:
        top = mind.max()
        if top <= 0:
            break
        i = _lex_first(X, np.flatnonzero(mind == top))
        chosen.append(i)
        mind = np.minimum(mind, _dist_to_point(X, X[i], ambient))
    return np.array(chosen, dtype=np.intp), mind


def refine_centers(X, C, ambient, rounds=30):
    """k-center local improvement with monotone acceptance.

    Each round assigns points to their nearest centre and moves every centre
    a fraction of the way towards its farthest member (a Badoiu-Clarkson
    step).  A move is kept only if it shrinks that cluster's radius, so the
    covering radius never grows; rejected clusters halve their step.
    Centres remain convex combinations of cloud points.
    """
    C = np.array(C, dtype=float)
    if len(C) == 0 or len(X) == 0:
        return C
    step = np.full(len(C), 0.5)
    for _ in range(rounds):
        labels, dist = nearest(X, C, ambient)
        order = np.lexsort((-dist, labels))
        lab_sorted = labels[order]
        starts = np.flatnonzero(np.r_[True, lab_sorted[1:] != lab_sorted[:-1]])
        clusters = lab_sorted[starts]
        far = X[order[starts]]
        old_r = dist[order[starts]]
        prop = C.copy()
        prop[clusters] = C[clusters] + (far - C[clusters]) * step[clusters, None]
        new_d = ambient.norm(X[order] - prop[lab_sorted])
        new_r = np.maximum.reduceat(new_d, starts)
        better = new_r < old_r
        C[clusters[better]] = prop[clusters[better]]
        step[clusters[~better]] *= 0.5
        if np.all(step[clusters] < 1e-6):
            break
    return C


def greedy_cover(cloud, m, ambient=Euclidean(), refine=True, rounds=30, seed_net=None):
    """Net of at most ``m`` centres and its verified covering radius."""
    if m < 1:
        raise ValueError("m must be >= 1")
    X = _points(cloud)
    if len(X) <= m:
        return X.copy(), 0.0
    if seed_net is not None and len(seed_net):
        seed_net = np.asarray(seed_net, dtype=float)[:m]
        idx, _ = farthest_first(X, m - len(seed_net), ambient, seed_centers=seed_net)
        C = np.vstack([seed_net, X[idx]]) if len(idx) else seed_net.copy()
    else:
        idx, _ = farthest_first(X, m, ambient)
        C = X[idx]
    if refine:
        C = refine_centers(X, C, ambient, rounds)
    return C, covering_radius(X, C, ambient)


def packing_points(X, k, ambient, sweeps=50, max_exchange=17):
    """Indices of ``k`` well-separated cloud points.

    Farthest-point traversal, then (for ``k <= max_exchange``) exchange
    sweeps: each point is re-placed at the cloud point farthest from the
    others whenever that enlarges its own nearest-neighbour distance.  Pairs
    not involving the moved point are untouched, so the minimum pairwise
    distance never decreases.
    """
    idx, _ = farthest_first(X, k, ambient)
    if len(idx) < k or k < 3 or k > max_exchange:
        return idx
    idx = list(idx)
    D = np.stack([_dist_to_point(X, X[i], ambient) for i in idx], axis=1)
    for _ in range(sweeps):
        moved = False
        for c in range(k):
            keep = [j for j in range(k) if j != c]
            mind = D[:, keep].min(axis=1)
            cand = _lex_first(X, np.flatnonzero(mind == mind.max()))
            if mind[cand] > mind[idx[c]] * (1 + 1e-12):
                idx[c] = cand
                D[:, c] = _dist_to_point(X, X[cand], ambient)
                moved = True
        if not moved:
            break
    return np.array(idx, dtype=np.intp)


def packing_bound(cloud, m, ambient=Euclidean()):
    """Radius ``r`` certified by ``m + 1`` cloud points with pairwise distance ``> 2r``.

    Any ``m`` balls of radius ``r`` then miss one of those points, so the
    entropy number at cardinality ``m`` exceeds ``r``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    X = _points(cloud)
    if len(X) <= m:
        return 0.0
    idx = packing_points(X, m + 1, ambient)
    if len(idx) < m + 1:
        return 0.0
    return _half_min_pairwise(X[idx], ambient)


def _half_min_pairwise(P, ambient):
    if len(P) > _TREE_MIN_CENTERS and P.shape[1] <= _TREE_MAX_DIM:
        w, p = _minkowski(ambient, P.shape[1])
        _, nn = cKDTree(P * w).query(P * w, k=2, p=p)
        # exact distance of each point to its tree neighbour (self excluded)
        j = np.where(nn[:, 0] == np.arange(len(P)), nn[:, 1], nn[:, 0])
        best = float(np.min(ambient.norm(P - P[j])))
    else:
        best = math.inf
        for i in range(len(P) - 1):
            best = min(best, float(np.min(ambient.norm(P[i + 1:] - P[i]))))
    return 0.5 * best * (1 - 1e-12)


def _points(cloud):
    X = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) == 0:
        raise ValueError("empty cloud")
    return X


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------


@dataclass
class EntropyProfile:
    """Brackets for ``n = 0..n_max`` plus the data for a volumetric tail.

    ``dim``/``diam`` of ``None`` means no tail (explicit profiles).  A
    ``tail_model`` replaces the plain volumetric tail.
    """

    brackets: list
    dim: int = None
    diam: float = None
    source: dict = field(default_factory=dict)
    tail_model: TailModel = None

    @property
    def n_max(self):
        return len(self.brackets) - 1

    @property
    def upper(self):
        return np.array([b.upper for b in self.brackets])

    @property
    def lower(self):
        return np.array([b.lower for b in self.brackets])

    def tail(self, n):
        if self.dim is None or self.diam is None:
            return 0.0
        if self.tail_model is not None:
            return self.tail_model(n)
        return volumetric_tail(self.dim, self.diam, n)

    def scaled(self, s):
        br = [
            EntropyBracket(b.n, s * b.lower, s * b.upper, b.cardinality_bound, b.method,
                           None if b.net is None else s * b.net, s * b.resolution)
            for b in self.brackets
        ]
        model = None if self.tail_model is None else self.tail_model.scaled(s)
        return EntropyProfile(br, self.dim, None if self.diam is None else s * self.diam,
                              self.source, model)

    @classmethod
    def from_values(cls, upper, lower=None, dim=None, diam=None):
        lower = upper if lower is None else lower
        br = [EntropyBracket(n, float(lo), float(up), cardinality_bound(n), "explicit")
              for n, (lo, up) in enumerate(zip(lower, upper))]
        return cls(br, dim, diam, {"kind": "explicit"})

    def to_dict(self):
        return {
            "brackets": [b.to_dict() for b in self.brackets],
            "dim": self.dim,
            "diam": self.diam,
            "source": self.source,
            "tail": None if self.tail_model is None else self.tail_model.to_dict(),
        }


def entropy_profile(cloud, n_max, ambient=Euclidean(), dim=None, diam=None, rounds=30,
                    resolution=0.0, source=None, tail_model=None):
    """Brackets for every level up to ``n_max`` (at most 4).

    Level ``n+1`` is seeded with the level-``n`` net, and the level-``n``
    net is kept whenever it covers better, so upper brackets are
    nonincreasing.  The origin is a level-0 candidate.
    """
    if n_max > MAX_EXPLICIT_LEVEL:
        raise ValueError(
            f"explicit nets are capped at n = {MAX_EXPLICIT_LEVEL}; use volumetric_tail beyond"
        )
    X = _points(cloud)
    N = len(X)
    sizes = [cardinality_bound(n) for n in range(n_max + 1)]

    brackets = []
    prev_net, prev_r = None, math.inf
    for n, m in enumerate(sizes):
        if N <= m:
            net, r, method = X.copy(), 0.0, "exhaustive"
        else:
            if prev_net is None:
                net, r = greedy_cover(X, m, ambient, rounds=rounds)
                origin = np.zeros((1, X.shape[1]))
                r0 = covering_radius(X, origin, ambient)
                if r0 < r:
                    net, r = origin, r0
            else:
                net, r = greedy_cover(X, m, ambient, rounds=rounds)
                seeded, rs = greedy_cover(X, m, ambient, rounds=rounds, seed_net=prev_net)
                if rs < r:
                    net, r = seeded, rs
            method = "greedy+packing"
            if prev_r <= r:
                net, r = prev_net, prev_r
        lower = min(packing_bound(X, m, ambient), r)
        brackets.append(EntropyBracket(n, lower, r, m, method, net, resolution))
        prev_net, prev_r = net, r
    return EntropyProfile(brackets, dim, diam, source or {}, tail_model)


def entropy_bracket(cloud, n, ambient=Euclidean(), rounds=30):
    """Bracket on ``e_n`` of the cloud for ``n <= 4``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return entropy_profile(cloud, n, ambient, rounds=rounds).brackets[n]


def resolution(cloud, fresh, ambient=Euclidean()):
    """Largest distance from fresh samples of the body to the cloud."""
    return covering_radius(np.asarray(fresh, dtype=float), _points(cloud), ambient)


def volumetric_tail(d, diam, n):
    """``3 diam 2^(-2^n / d)``: volumetric bound on ``e_n`` in dimension ``d``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return 3.0 * diam * 2.0 ** (-(2.0 ** n) / d)


def hull_sample_size(M, n):
    """Largest ``k`` with ``C(M + k - 1, k) < 2^(2^n)`` (multisets of size ``k`` from ``M`` items)."""
    lim = (2.0 ** n) * math.log(2.0) * (1 - 1e-12)
    fits = lambda k: gammaln(M + k) - gammaln(k + 1) - gammaln(M) < lim
    lo, hi = 0, 1
    while fits(hi):
        if hi > 2 ** 60:
            return hi
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        lo, hi = (mid, hi) if fits(mid) else (lo, mid)
    return lo


@dataclass(frozen=True)
class TailModel:
    """Upper bounds on ``e_n`` beyond the explicit levels.

    Entry ``j`` describes a projection of the body onto ``dims[j]``
    coordinates: its diameter ``diams[j]``, the largest norm ``radii[j]`` of
    the discarded part and, for absolute convex hulls in Euclidean space,
    the vertex count and largest vertex norm of the projection.  Each entry
    gives ``e_n <= min(volumetric, empirical-average) + radius``; the bound
    is the minimum over entries.

    The empirical-average bound writes a point of ``absconv{v_1..v_m}`` as
    the mean of a random sign-vertex-or-zero pick; the average of ``k``
    independent picks lands within ``R / sqrt(k)`` in expectation, and there
    are at most ``C(2m + k, k)`` such averages.
    """

    dims: tuple
    diams: tuple
    radii: tuple
    hull_counts: tuple = None
    hull_radii: tuple = None

    @classmethod
    def volumetric(cls, d, diam):
        return cls((d,), (diam,), (0.0,))

    def __call__(self, n):
        return _tail_value(self, n)

    def _evaluate(self, n):
        best = math.inf
        for j, (k, diam, rad) in enumerate(zip(self.dims, self.diams, self.radii)):
            v = volumetric_tail(k, diam, n)
            if self.hull_counts is not None:
                size = hull_sample_size(2 * self.hull_counts[j] + 1, n)
                if size >= 1:
                    v = min(v, self.hull_radii[j] / math.sqrt(size))
            best = min(best, v + rad)
        return best

    def scaled(self, s):
        hr = None if self.hull_radii is None else tuple(s * v for v in self.hull_radii)
        return TailModel(self.dims, tuple(s * v for v in self.diams),
                         tuple(s * v for v in self.radii), self.hull_counts, hr)

    def to_dict(self):
        return {"dims": list(self.dims), "diams": list(self.diams), "radii": list(self.radii),
                "hull_counts": None if self.hull_counts is None else list(self.hull_counts),
                "hull_radii": None if self.hull_radii is None else list(self.hull_radii)}


@lru_cache(maxsize=4096)
def _tail_value(model, n):
    return model._evaluate(n)


def tail_sum(weight, tail, start):
    """``sum_{n >= start} weight(n) * tail(n)`` with a certified remainder.

    Summation stops once a term falls below 1e-18 of the running total
    after terms have started to at least halve; the remaining terms are then
    dominated by a geometric series bounded by the last term.
    """
    total, prev, n = 0.0, None, start
    while True:
        term = weight(n) * tail(n)
        total += term
        if term == 0:
            return total
        if prev is not None and term <= 0.5 * prev and term <= 1e-18 * total:
            return total + term
        if n > start + 4096:
            raise AssertionError("tail series does not converge")
        prev, n = term, n + 1


# ---------------------------------------------------------------------------
# Carl-lemma diagnostic
# ---------------------------------------------------------------------------


def lr_ellipsoid_cloud(c, r, count, seed):
    """Uniform, boundary and axis points of ``{x : ||(x_i / c_i)||_r <= 1}``."""
    c = np.asarray(c, dtype=float)
    d = len(c)
    rng = np.random.default_rng(seed)
    inner = _uniform_lq(rng, count // 2, d, r) * c
    g = rng.standard_normal((count - count // 2, d))
    bnd = g / np.linalg.norm(g, ord=r, axis=1, keepdims=True) * c
    axes = np.diag(c)
    return np.vstack([axes, -axes, bnd, inner])


def carl_ratio(c, r, s, u, n_max, ambient=Euclidean(), count=20000, seed=0):
    """Compare both sides of Carl's two-sided entropy estimate for an l_r ellipsoid.

    Returns ``(lhs, rhs, ratio, lhs_lower)`` where ``lhs`` uses upper
    brackets plus the volumetric tail and ``lhs_lower`` the lower brackets.
    """
    c = [float(v) for v in c]
    if any(v <= 0 for v in c) or any(a < b for a, b in zip(c, c[1:])):
        raise ValueError("c must be positive and nonincreasing")
    if not (r > 0 and u > 0 and 1 / s > max(0.5 - 1 / r, 0.0)):
        raise ValueError("need r > 0, u > 0 and 1/s > (1/2 - 1/r)_+")
    if n_max > MAX_EXPLICIT_LEVEL:
        raise ValueError("n_max must be <= 4")
    d = len(c)
    cloud = lr_ellipsoid_cloud(c, r, count, seed)
    diam = 2 * float(np.max(ambient.norm(cloud)))
    prof = entropy_profile(cloud, n_max, ambient, dim=d, diam=diam)
    expo = 1 / s + 1 / r - 0.5
    w = lambda n: 2.0 ** (n * expo * u)
    lhs = sum(w(n) * b.upper ** u for n, b in enumerate(prof.brackets))
    lhs += tail_sum(w, lambda n: prof.tail(n) ** u, n_max + 1)
    lhs_lower = sum(w(n) * b.lower ** u for n, b in enumerate(prof.brackets))
    rhs = sum((k ** (1 / s - 1 / u) * ck) ** u for k, ck in enumerate(c, start=1))
    return lhs, rhs, lhs / rhs, lhs_lower


def dump_profile(profile, path):
    with open(path, "w") as fh:
        json.dump(profile.to_dict(), fh, indent=2, sort_keys=True)
