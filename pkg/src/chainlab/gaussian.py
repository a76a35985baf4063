"""Monte Carlo estimates of Gaussian suprema and the bound sandwich.

``E sup_{x in B} <x, g>`` equals the expected dual gauge of a standard
Gaussian vector, so no inner optimization is needed.  Samples come from
numpy's PCG64 generator (ziggurat normals); chunk ``c`` uses the stream
seeded by ``(seed, c)`` and results are reduced in chunk order, so
estimates are bit-identical for a given ``(seed, samples)`` regardless of
the number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .bodies import Euclidean, LqEllipsoid
from .chaining import (
    build_admissible_sequence,
    build_pool,
    dudley_bound,
    gamma_value,
    interpolation_bound,
    qconvex_bound,
    trivial_lower_bound,
)

CHUNK = 10_000
GENERATOR = "numpy PCG64, ziggurat standard normals, substream (seed, chunk)"


@dataclass
class McEstimate:
    mean: float
    stderr: float
    samples: int
    seed: int
    generator: str = GENERATOR

    def to_dict(self):
        return asdict(self)


def _chunk_values(body, d, seed, c, size):
    rng = np.random.default_rng([seed, c])
    g = rng.standard_normal((size, d))
    return np.asarray(body.dual_gauge(g), dtype=float)


def mc_sup(body, samples=100_000, seed=0, workers=1):
    """Estimate ``E sup_{x in B} <x, g>`` for standard Gaussian ``g``."""
    if samples < 100:
        raise ValueError("samples must be >= 100")
    d = body.dim
    sizes = [min(CHUNK, samples - s) for s in range(0, samples, CHUNK)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda a: _chunk_values(body, d, seed, *a), enumerate(sizes)))
    else:
        parts = [_chunk_values(body, d, seed, c, n) for c, n in enumerate(sizes)]
    vals = np.concatenate(parts)
    return McEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals))),
                      samples, seed)


def chi_mean(d):
    """``E ||g||_2`` for a standard Gaussian in ``R^d``."""
    return math.sqrt(2.0) * math.exp(math.lgamma((d + 1) / 2) - math.lgamma(d / 2))


@dataclass
class SandwichConfig:
    p: float = 2.0
    q: float = None
    samples: int = 100_000
    seed: int = 0
    n_max: int = 4
    pool_size: int = 6000
    c_low: float = 4.0
    c_up: float = 4.0
    a_grid: list = None
    workers: int = 1


@dataclass
class BoundReport:
    dudley: float
    interpolation: float
    best_a: float
    qconvex: float
    q: float
    trivial_lower: float
    gamma_upper_certified: float
    mc: McEstimate
    realized: float = None
    truncated: dict = field(default_factory=dict)
    tail: float = 0.0
    checks: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def ratios(self):
        m = self.mc.mean
        out = {"dudley": self.dudley / m, "interpolation": self.interpolation / m,
               "trivial_lower": self.trivial_lower / m,
               "gamma_upper_certified": self.gamma_upper_certified / m}
        if self.qconvex is not None:
            out["qconvex"] = self.qconvex / m
        return out

    def to_dict(self):
        return {
            "dudley": self.dudley,
            "interpolation": self.interpolation,
            "best_a": self.best_a,
            "qconvex": self.qconvex,
            "q": self.q,
            "trivial_lower": self.trivial_lower,
            "gamma_upper_certified": self.gamma_upper_certified,
            "mc": self.mc.to_dict(),
            "realized": self.realized,
            "ratios": self.ratios,
            "truncated": self.truncated,
            "tail": self.tail,
            "checks": self.checks,
            "config": self.config,
        }


def _convexity_exponent(body, q):
    if q is not None:
        return q
    if isinstance(body, LqEllipsoid) and body.q >= 2:
        return body.q
    return None


def sandwich_report(body, ambient=Euclidean(), config=None, pool=None):
    """All chaining bounds next to the Monte Carlo estimate.

    ``gamma_upper_certified`` is the smaller of Dudley's bound and the
    realized chaining sum of the sequence built at the best ``a`` (both hold
    with constant 1).  Checks: ``trivial_lower <= c_low mc`` and
    ``mc <= c_up gamma_upper_certified``.  The q-convex bound is reported
    only for bodies known to be q-convex (l_q ellipsoids with q >= 2) or
    when ``config.q`` is given.
    """
    if not isinstance(ambient, Euclidean):
        raise ValueError("the Gaussian identification needs the Euclidean ambient norm")
    cfg = config or SandwichConfig()
    if pool is None:
        pool = build_pool(body, ambient, cfg.pool_size, cfg.seed)
    prof = pool.profile(cfg.n_max)
    dud = dudley_bound(prof, cfg.p)
    ib = interpolation_bound(body, ambient, cfg.p, cfg.a_grid, cfg.n_max, pool=pool)
    q = _convexity_exponent(body, cfg.q)
    qc = qconvex_bound(prof, cfg.p, q) if q is not None else None
    low = trivial_lower_bound(prof, cfg.p)
    seq = build_admissible_sequence(body, ambient, cfg.p, ib.best_a, cfg.n_max, pool=pool)
    realized = gamma_value(seq, pool.points, cfg.p, ambient)
    upper = min(dud, realized)
    mc = mc_sup(body, cfg.samples, cfg.seed, cfg.workers)
    checks = {
        "trivial_lower<=c_low*mc": bool(low <= cfg.c_low * mc.mean),
        "mc<=c_up*gamma_upper": bool(mc.mean <= cfg.c_up * upper),
        "trivial_lower<=gamma_upper": bool(low <= upper * (1 + 1e-9)),
    }
    truncated = {"dudley": dudley_bound(prof, cfg.p, tail=False),
                 "interpolation": ib.truncated}
    conf = {k: v for k, v in asdict(cfg).items() if k != "workers"}
    conf["body"] = body.to_dict()
    return BoundReport(dud, ib.value, ib.best_a, qc, q, low, upper, mc, realized, truncated,
                       ib.tail, checks, conf)
