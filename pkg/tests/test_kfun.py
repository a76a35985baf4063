import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainlab.bodies import (
    AbsConvPolytope,
    Euclidean,
    EuclideanBall,
    LqEllipsoid,
    Octahedron,
    PerturbedSimplex,
    WeightedLp,
    sample_cloud,
)
from chainlab.kfun import (
    EllipsoidDilation,
    NoClosedForm,
    SparsitySet,
    Superset,
    bt_closed_form,
    bt_member,
    concavity_defects,
    displacements,
    k_functional,
    k_profile,
    membership_threshold,
    sample_bt,
)
from oracles import grid_k

E = Euclidean()
ELL = LqEllipsoid(2, (2.0, 1.0))


def test_zero_t_is_exactly_zero():
    for body in (ELL, Octahedron((1.0, 0.5)), PerturbedSimplex(3, 0.5)):
        r = k_functional(body, E, 0.0, np.ones(body.dim))
        assert r.value == 0.0
        assert not np.any(r.minimizer)


def test_ball_collinear_minimizer():
    r = k_functional(EuclideanBall(1.0, 2), E, 0.5, (3.0, 0.0))
    assert r.value == pytest.approx(1.5, abs=1e-6)
    np.testing.assert_allclose(r.minimizer, 0.0, atol=1e-5)


def test_ellipsoid_against_fine_grid():
    x = np.array([1.0, 1.0])
    ref, _ = grid_k(ELL, x, 1.0, half=2.0, step=1e-3)
    r = k_functional(ELL, E, 1.0, x)
    assert r.value == pytest.approx(ref, abs=1e-4)
    assert r.value <= ref + 1e-9


def test_profile_ball():
    prof = k_profile(EuclideanBall(1.0, 2), E, (3.0, 0.0), (0, 0.5, 1, 2))
    np.testing.assert_allclose([r.value for r in prof], [0, 1.5, 3, 3], atol=1e-6)


def test_profile_rejects_bad_grid():
    with pytest.raises(ValueError):
        k_profile(ELL, E, (1.0, 1.0), [1.0, 0.5])
    with pytest.raises(ValueError):
        k_profile(ELL, E, (1.0, 1.0), [])


def test_kresult_invariants_and_json():
    x = np.array([1.0, -0.4])
    for t in (0.3, 1.0, 3.0):
        r = k_functional(ELL, E, t, x)
        assert r.gap <= 1e-6 * (1 + r.value)
        recomputed = ELL.gauge(r.minimizer) + t * np.linalg.norm(x - r.minimizer)
        assert recomputed == pytest.approx(r.value, abs=1e-6)
        assert r.certificate @ x <= r.value + 1e-6
        assert ELL.dual_gauge(r.certificate) <= 1 + 1e-6
        assert np.linalg.norm(r.certificate) <= t + 1e-6
        doc = json.loads(json.dumps(r.to_dict()))
        assert set(doc) == {"t", "value", "gap", "minimizer", "certificate"}


@pytest.mark.parametrize("body", [ELL, Octahedron((1.0, 0.5, 0.25)), LqEllipsoid(3, (1.0, 0.6))],
                         ids=["ell2", "oct3", "ell3"])
def test_profile_monotone_concave_bounded(body):
    rng = np.random.default_rng(4)
    ts = np.linspace(0, 4, 17)
    for x in rng.standard_normal((3, body.dim)):
        prof = k_profile(body, E, x, ts)
        vals = np.array([r.value for r in prof])
        scale = max(1.0, body.gauge(x))
        assert np.all(np.diff(vals) >= -1e-9 * scale)
        assert np.all(concavity_defects(ts, vals) <= 1e-9 * scale)
        assert np.all(vals <= body.gauge(x) + 1e-9)
        disp = displacements(prof, x, E)
        assert np.all(np.diff(disp) <= 1e-4)
        for r in prof:
            assert body.gauge(r.minimizer) <= body.gauge(x) + 1e-9


def test_riemann_sum_of_displacements():
    x = np.array([1.0, 1.0])
    ts = np.linspace(0, 20, 401)
    disp = displacements(k_profile(ELL, E, x, ts), x, E)
    # displacement is nonincreasing, so the right-endpoint sum is a lower sum
    lower = np.sum(np.diff(ts) * disp[1:])
    assert lower <= ELL.gauge(x) + 1e-3


@pytest.mark.parametrize("a", [0.1, 1.0, 10.0])
def test_dyadic_discretization(a):
    p, N = 2.0, 12
    x = np.array([0.8, -1.3])
    ts = a * 2 ** (np.arange(N + 1) / p)
    disp = displacements(k_profile(ELL, E, x, ts), x, E)
    total = (1 - 2 ** (-1 / p)) * a * np.sum(2 ** (np.arange(N + 1) / p) * disp)
    assert total <= ELL.gauge(x) + 1e-3


def test_fixed_point_on_bt():
    rng = np.random.default_rng(1)
    for y in sample_cloud(ELL, 20, 9, "interior"):
        t = membership_threshold(ELL, E, y) * (1 + rng.uniform(0, 1))
        assert bt_member(ELL, E, t, y)
        r = k_functional(ELL, E, t, y)
        assert r.value == pytest.approx(ELL.gauge(y), abs=1e-6)


# -- membership ---------------------------------------------------------------


def test_bt_member_examples():
    assert bt_member(Octahedron((1.0, 1.0, 1.0)), E, 1.5, (1.0, 0.0, 0.0))
    ball = EuclideanBall(1.0, 2)
    m = bt_member(ball, E, 0.5, (0.3, 0.0))
    assert not m
    assert m.threshold == pytest.approx(1.0)
    assert bt_member(ball, E, 0.5, (0.0, 0.0))
    body = PerturbedSimplex(8, 0.25)
    centroid = body.matrix.mean(axis=1)
    m = bt_member(body, E, 4.0, centroid)
    assert m
    assert float(m.certificate @ centroid) == pytest.approx(body.gauge(centroid), abs=1e-9)


def test_bt_member_rejects_outside_points():
    with pytest.raises(ValueError):
        bt_member(ELL, E, 1.0, (3.0, 0.0))


def test_bt_member_large_t_short_circuit():
    assert bt_member(ELL, E, 1e9, (2.0, 0.0))


def test_norm_bound_on_members():
    body = Octahedron((1.0, 0.5, 0.25))
    for t in (1.0, 2.5, 5.0):
        pts = sample_bt(body, E, t, 200, 3)
        assert len(pts) > 0
        assert np.all(body.gauge(pts) <= t * np.linalg.norm(pts, axis=1) + 1e-9)


def test_octahedron_sparsity_weights():
    body = Octahedron((1.0, 0.5))
    # support {1}: weight 1, support {1,2}: weight 1 + 4 = 5
    assert bt_member(body, E, 1.0, (0.5, 0.0))
    assert not bt_member(body, E, 2.0, (0.5, 0.1))
    assert bt_member(body, E, math.sqrt(5), (0.5, 0.1))


def test_weighted_ambient_membership():
    body = Octahedron((1.0, 1.0))
    amb = WeightedLp(2, (1.0, 2.0))
    # minimal certificate (1, 0) has dual norm 1 / w_1 = 1
    assert bt_member(body, amb, 1.0, (1.0, 0.0))
    assert not bt_member(body, amb, 0.9, (1.0, 0.0))


def test_polytope_membership_matches_octahedron():
    oct_ = Octahedron((1.0, 1.0))
    poly = AbsConvPolytope(((1.0, 0.0), (0.0, 1.0)))
    for y in sample_cloud(oct_, 30, 2, "interior"):
        assert membership_threshold(poly, E, y) == pytest.approx(membership_threshold(oct_, E, y), abs=1e-6)


# -- closed forms ---------------------------------------------------------------


def test_closed_form_ellipsoid_q2():
    cf = bt_closed_form(LqEllipsoid(2, (3.0, 1.0)), 1.7)
    assert isinstance(cf, EllipsoidDilation)
    assert cf.c == pytest.approx((9.0, 1.0))
    assert cf.exponent == 2
    assert cf.dilation == pytest.approx(1.7)


def test_closed_form_octahedron_zero_t():
    cf = bt_closed_form(Octahedron((1.0, 0.5)), 0.0)
    assert isinstance(cf, SparsitySet)
    assert cf.contains((0.0, 0.0))
    assert not cf.contains((0.1, 0.0))


def test_closed_form_ellipsoid_containment_q3():
    body = LqEllipsoid(3, (1.0, 0.5))
    t = 2.0
    cf = bt_closed_form(body, t)
    pts = sample_bt(body, E, t, 2000, 5)
    assert len(pts) > 100
    for y in pts:
        assert bt_member(body, E, t, y)
    assert np.all(cf.c_gauge(pts) <= math.sqrt(t) + 1e-6)


def test_closed_form_perturbed_simplex():
    body = PerturbedSimplex(4, 0.5)
    cf = bt_closed_form(body, 2.0)
    assert isinstance(cf, Superset)
    x = body.matrix @ np.full(4, 0.25)
    assert cf.contains(x)
    assert bt_member(body, E, 2.0, x)
    with pytest.raises(NoClosedForm):
        bt_closed_form(body, 1.9)


def test_closed_form_unsupported():
    with pytest.raises(NoClosedForm):
        bt_closed_form(AbsConvPolytope(((1.0, 0.0), (0.0, 1.0))), 1.0)


@settings(max_examples=25, deadline=None)
@given(
    x=st.lists(st.floats(-3, 3, allow_nan=False), min_size=2, max_size=2),
    t=st.floats(0.05, 5),
)
def test_k_value_brackets(x, t):
    """max(<z, x>) over certificates <= K <= min(gauge, t ||x||)."""
    x = np.array(x)
    r = k_functional(ELL, E, t, x)
    assert r.value <= min(ELL.gauge(x), t * np.linalg.norm(x)) + 1e-6
    assert r.value >= -1e-9
