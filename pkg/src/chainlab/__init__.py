"""Numerical chaining bounds on symmetric convex bodies."""

from .bodies import (
    AbsConvPolytope,
    Euclidean,
    EuclideanBall,
    LqEllipsoid,
    Octahedron,
    PerturbedSimplex,
    WeightedLp,
    dual_gauge,
    gauge,
    gauge_subgradient,
    sample_cloud,
)
from .entropy import EntropyBracket, EntropyProfile, PointCloud, entropy_bracket, entropy_profile
from .kfun import bt_member, k_functional, k_profile

__version__ = "0.1.0"

__all__ = [
    "AbsConvPolytope",
    "EntropyBracket",
    "EntropyProfile",
    "Euclidean",
    "EuclideanBall",
    "LqEllipsoid",
    "Octahedron",
    "PerturbedSimplex",
    "PointCloud",
    "WeightedLp",
    "bt_member",
    "dual_gauge",
    "entropy_bracket",
    "entropy_profile",
    "gauge",
    "gauge_subgradient",
    "k_functional",
    "k_profile",
    "sample_cloud",
]
