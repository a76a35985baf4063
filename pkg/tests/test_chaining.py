import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainlab.bodies import Euclidean, EuclideanBall, LqEllipsoid, Octahedron, sample_cloud
from chainlab.chaining import (
    AdmissibleSequence,
    build_admissible_sequence,
    build_pool,
    contraction_check,
    counterexample_check,
    default_a_grid,
    default_lambda,
    dudley_bound,
    gamma_value,
    interpolation_bound,
    qconvex_bound,
    qconvexity_modulus,
    regularized_profile,
    trivial_lower_bound,
    unconditional_assumption_check,
)
from chainlab.entropy import EntropyProfile, entropy_profile, volumetric_tail
from chainlab.gaussian import chi_mean
from oracles import interval_entropy

E = Euclidean()
SPIKE = EntropyProfile.from_values([1.0, 0.0, 0.0, 0.0])


# -- bound formulas ---------------------------------------------------------------


def test_dudley_spike():
    assert dudley_bound(SPIKE, 2) == 1.0


def test_dudley_interval_oracle():
    X = np.linspace(-1, 1, 4001)[:, None]
    prof = entropy_profile(X, 3, E, dim=1, diam=2.0)
    exact = [interval_entropy(n) for n in range(4)]
    # brackets straddle the exact interval covering numbers
    assert np.all(prof.lower <= np.array(exact) + 1e-9)
    assert np.all(prof.upper >= np.array(exact) - 1e-3)
    assert 1 <= dudley_bound(prof, 2) <= 4


def test_dudley_tail_is_volumetric_series():
    prof = EntropyProfile.from_values([0.0], dim=1, diam=2.0)
    ref = sum(2 ** (n / 2) * volumetric_tail(1, 2.0, n) for n in range(1, 60))
    assert dudley_bound(prof, 2) == pytest.approx(ref, rel=1e-12)
    assert dudley_bound(prof, 2, tail=False) == 0.0


def test_qconvex_spike_and_limit():
    assert qconvex_bound(SPIKE, 2, 2) == pytest.approx(1.0)
    prof = EntropyProfile.from_values([1.0, 0.6, 0.3, 0.1, 0.02], dim=3, diam=2.0)
    assert qconvex_bound(prof, 2, 1e6) == pytest.approx(dudley_bound(prof, 2), rel=1e-3)
    with pytest.raises(ValueError):
        qconvex_bound(prof, 2, 1.0)


def test_qconvex_never_exceeds_dudley():
    prof = EntropyProfile.from_values([1.0, 0.6, 0.3, 0.1], dim=3, diam=2.0)
    for q in (1.5, 2, 3, 10):
        assert qconvex_bound(prof, 2, q) <= dudley_bound(prof, 2) * (1 + 1e-12)


@pytest.mark.slow
def test_qconvex_ellipsoid_against_semiaxes():
    b = tuple(2.0 ** -k for k in range(8))
    pool = build_pool(LqEllipsoid(2, b), E, 6000, 0)
    val = qconvex_bound(pool.profile(4), 2, 2)
    ref = math.sqrt(sum(v * v for v in b))
    assert ref / 30 <= val <= 30 * ref


def test_trivial_lower_examples():
    prof = EntropyProfile.from_values([1.0, 0.0], lower=[1.0, 0.0])
    assert trivial_lower_bound(prof, 2) == 1.0
    two = entropy_profile(np.array([[-1.0], [1.0]]), 2, E)
    assert trivial_lower_bound(two, 2) == pytest.approx(1.0, abs=1e-9)


def test_trivial_lower_circle_vs_disc_gaussian_mean():
    th = np.linspace(0, 2 * np.pi, 4000, endpoint=False)
    prof = entropy_profile(np.c_[np.cos(th), np.sin(th)], 4, E)
    mc = chi_mean(2)  # E sup over the disc
    low = trivial_lower_bound(prof, 2)
    assert mc / 4 <= low <= 4 * mc


@settings(max_examples=40, deadline=None)
@given(
    e=st.lists(st.floats(0, 5), min_size=1, max_size=6),
    s=st.floats(0.1, 10),
    p=st.sampled_from([1.0, 2.0, 4.0]),
)
def test_bounds_homogeneous_in_profile(e, s, p):
    e = sorted(e, reverse=True)
    prof = EntropyProfile.from_values(e, dim=2, diam=2 * max(e[0], 1e-3))
    sp = prof.scaled(s)
    assert dudley_bound(sp, p) == pytest.approx(s * dudley_bound(prof, p), rel=1e-9)
    assert qconvex_bound(sp, p, 3) == pytest.approx(s * qconvex_bound(prof, p, 3), rel=1e-9)
    assert trivial_lower_bound(sp, p) == pytest.approx(s * trivial_lower_bound(prof, p), rel=1e-9)
    assert trivial_lower_bound(prof, p) <= dudley_bound(prof, p) + 1e-12


# -- interpolation bound and admissible sequences ------------------------------------


@pytest.fixture(scope="module")
def ball_pool():
    return build_pool(EuclideanBall(1.0, 2), E, 3000, 0)


def test_interpolation_ball_vs_gaussian_mean(ball_pool):
    res = interpolation_bound(EuclideanBall(1.0, 2), E, 2, pool=ball_pool)
    mc = chi_mean(2)
    assert 0.5 * mc <= res.value <= 10 * mc
    assert res.value == pytest.approx(res.truncated + res.tail)
    assert len(res.per_a) == 25
    assert min(r["truncated"] for r in res.per_a) == pytest.approx(res.truncated)


def test_interpolation_rejects_bad_grid(ball_pool):
    with pytest.raises(ValueError):
        interpolation_bound(EuclideanBall(1.0, 2), E, 2, a_grid=[], pool=ball_pool)
    with pytest.raises(ValueError):
        interpolation_bound(EuclideanBall(1.0, 2), E, 2, n_max=5, pool=ball_pool)


def test_default_a_grid():
    g = default_a_grid(2.0)
    assert len(g) == 25
    assert g[0] == pytest.approx(5e-4) and g[-1] == pytest.approx(500)


def test_bounds_scale_with_body():
    b = (1.0, 0.5, 0.25)
    p1 = build_pool(Octahedron(b), E, 1500, 0)
    p2 = build_pool(Octahedron(tuple(2 * v for v in b)), E, 1500, 0)
    f1, f2 = p1.profile(3), p2.profile(3)
    assert dudley_bound(f2) == pytest.approx(2 * dudley_bound(f1), rel=1e-9)
    assert qconvex_bound(f2, 2, 2) == pytest.approx(2 * qconvex_bound(f1, 2, 2), rel=1e-9)
    assert trivial_lower_bound(f2) == pytest.approx(2 * trivial_lower_bound(f1), rel=1e-9)
    grid = default_a_grid(p1.diam, 9)
    i1 = interpolation_bound(Octahedron(b), E, 2, grid, 3, pool=p1)
    i2 = interpolation_bound(Octahedron(tuple(2 * v for v in b)), E, 2, grid / 2, 3, pool=p2)
    assert i2.value == pytest.approx(2 * i1.value, rel=1e-9)


def test_admissible_sizes_and_membership():
    body = Octahedron((1.0, 1.0))
    seq = build_admissible_sequence(body, E, 2, 1.0, 2, cloud_budget=1500)
    assert [len(T) for T in seq.levels][0] == 1
    assert all(len(T) <= cap for T, cap in zip(seq.levels, (1, 3, 15)))
    for T in seq.levels:
        assert np.all(np.asarray(body.gauge(T)) <= 1 + 1e-9)
    assert not np.any(seq.levels[0])


def test_admissible_validation():
    with pytest.raises(ValueError):
        AdmissibleSequence([np.zeros((2, 1))], 2, 1.0)
    with pytest.raises(ValueError):
        AdmissibleSequence([np.zeros((1, 1)), np.zeros((4, 1))], 2, 1.0)
    with pytest.raises(ValueError):
        build_admissible_sequence(Octahedron((1.0,)), E, 2, 0.0, 1)


def test_gamma_value_origin_sequence():
    X = sample_cloud(EuclideanBall(1.0, 2), 500, 0, "interior")
    seq = AdmissibleSequence([np.zeros((1, 2))] * 4, 2, 1.0)
    expected = sum(2 ** (n / 2) for n in range(4)) * np.max(np.linalg.norm(X, axis=1))
    assert gamma_value(seq, X) == pytest.approx(expected)
    seq_t = AdmissibleSequence([np.zeros((1, 2))] * 4, 2, 1.0, dim=2, diam=2.0)
    assert gamma_value(seq_t, np.zeros((3, 2))) > 0  # tail terms only


def test_gamma_value_cloud_inside_first_level():
    seq = AdmissibleSequence([np.array([[0.3, 0.0]]), np.array([[0.3, 0.0]])], 2, 1.0)
    assert gamma_value(seq, np.array([[0.3, 0.0]])) == 0.0
    with pytest.raises(ValueError):
        gamma_value(seq, np.zeros((2, 3)))


def test_gamma_value_of_built_ball_sequence(ball_pool):
    body = EuclideanBall(1.0, 2)
    res = interpolation_bound(body, E, 2, [1.0], pool=ball_pool)
    seq = build_admissible_sequence(body, E, 2, 1.0, pool=ball_pool)
    assert gamma_value(seq, ball_pool.points) <= res.value + 1e-6


def test_built_sequence_above_trivial_lower():
    body = Octahedron((1.0, 1.0, 1.0, 1.0))
    pool = build_pool(body, E, 2000, 0)
    res = interpolation_bound(body, E, 2, pool=pool)
    seq = build_admissible_sequence(body, E, 2, res.best_a, pool=pool)
    fresh = sample_cloud(body, 2000, 99, "boundary")
    val = gamma_value(seq, fresh)
    assert math.isfinite(val)
    assert trivial_lower_bound(pool.profile(4)) <= val
    assert val <= 2 * res.value


# -- regularized entropy numbers ------------------------------------------------------


def test_regularized_examples():
    assert regularized_profile([1, 0, 0], 1) == pytest.approx([1, 0.5, 0.25])
    assert regularized_profile([1, 1, 1], 1) == pytest.approx([1, 1, 1])
    assert default_lambda(2, 2) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        regularized_profile([1.0], 0)


@settings(max_examples=50, deadline=None)
@given(e=st.lists(st.floats(0, 10), min_size=1, max_size=8), lam=st.floats(0.1, 5))
def test_regularized_brute_force(e, lam):
    d = regularized_profile(e, lam)
    for n in range(len(e)):
        assert d[n] == pytest.approx(max(2 ** (lam * (k - n)) * e[k] for k in range(n + 1)))
        assert d[n] >= e[n]
        if n:
            assert d[n] >= 2 ** (-lam) * d[n - 1] * (1 - 1e-12)


# -- geometric checks ------------------------------------------------------------------


def test_contraction_ball_and_zero_t():
    rep = contraction_check(EuclideanBall(1.0, 2), E, 2, (0.0, 2.0), 2, pool_size=2000)
    assert rep["violations"] == 0
    zero = [r for r in rep["rows"] if r["t"] == 0.0]
    assert zero and all(r["ok"] and r["lhs"] == 0 for r in zero)
    assert any("t=0.0" in m for m in rep["notices"])
    finite = [r["K"] for r in rep["rows"] if r["t"] == 2.0]
    assert all(math.isfinite(k) for k in finite)


def test_contraction_l3_ellipsoid():
    rep = contraction_check(LqEllipsoid(3, (1.0, 0.5, 0.25)), E, 3, (1.0, 2.0), 2, pool_size=2000)
    assert rep["violations"] == 0


def test_qconvexity_modulus_ball():
    eta = qconvexity_modulus(EuclideanBall(1.0, 3), 10_000, 0)
    assert 1 / 8 - 0.01 <= eta


def test_qconvexity_modulus_l3_positive():
    assert qconvexity_modulus(LqEllipsoid(3, (1.0, 0.7, 0.3)), 10_000, 0) > 0


def test_qconvexity_needs_exponent():
    with pytest.raises(ValueError):
        qconvexity_modulus(Octahedron((1.0, 1.0)), 100)


def test_unconditional_examples():
    r = unconditional_assumption_check(2, (1.0, 1.0, 1.0), 2, (1,), 10_000)
    assert r["ok"] and r["rows"][0]["ratio"] <= 2 + 0.01
    r = unconditional_assumption_check(1.5, (1.0, 2.0, 4.0), 4, (1, 2), 10_000)
    assert r["ok"] and r["bound"] == 2.0


@pytest.mark.parametrize("q", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("w1", [1.0, 2.0])
def test_unconditional_one_dimensional_reduction(q, w1):
    """B_t = [-1, 1] once t >= 1/w1; the ratio is |s - s'|^(q-1) / (t w1), largest at s = -s' = 1."""
    t = 1.0 / w1
    r = unconditional_assumption_check(q, (w1,), 2, (t,), 500)
    assert r["rows"][0]["ratio"] == pytest.approx(2 ** (q - 1) / (t * w1), rel=1e-12)
    assert r["rows"][0]["ratio"] <= 2 ** (1 + max(q - 2, 0))


def test_counterexample_certificate_small():
    rep = counterexample_check(4, 0.5, 2.0, grid=200)
    assert rep["guarantee"] and rep["passed"]
    assert rep["residual"] <= 1e-9


def test_counterexample_witness_norm_at_threshold():
    d, eps = 16, 0.25
    rep = counterexample_check(d, eps, grid=50, diagnostic_levels=1, diagnostic_size=200)
    # ||v|| = 1 / (1 + d^(-1/2) / eps), strictly inside the unit ball
    assert rep["v_norm"] == pytest.approx(1 / (1 + d ** -0.5 / eps), abs=1e-12)
    assert rep["v_norm"] <= 1


def test_counterexample_below_threshold_is_no_guarantee():
    rep = counterexample_check(4, 0.5, 1.9, grid=100, diagnostic_levels=1, diagnostic_size=200)
    assert rep["status"] == "no guarantee" and rep["passed"] is None


def test_counterexample_parameter_checks():
    with pytest.raises(ValueError):
        counterexample_check(1, 0.5)
    with pytest.raises(ValueError):
        counterexample_check(4, 1.0)
