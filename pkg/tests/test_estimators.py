import numpy as np
import pytest

from contactlab import estimators as E, geometry as G
from contactlab.errors import DomainError, QualityError, ResourceError

ONE = G.complete(1)
TWO = G.complete(2)


def _z(est, truth):
    return abs(est.mean - truth) / est.stderr


def test_theta_single_vertex_closed_form():
    # isolated vertex: theta = h / (1 + h)
    est = E.theta(ONE, 0.0, 1.0, 30.0, 0, 40000, 11)
    assert _z(est, 0.5) < 4
    assert est.bias_bound < 1e-12
    est = E.theta(ONE, 0.0, 3.0, 30.0, 0, 40000, 12)
    assert _z(est, 0.75) < 4


def test_theta_zero_h_is_exactly_zero():
    est = E.theta(G.lattice(1), 1.0, 0.0, 10.0, 20, 500, 13)
    assert est.mean == 0.0
    assert est.bias_bound == 0.0


def test_theta_window_bias_bound():
    # short window: the bound must cover the closed-form deficit
    h, T = 1.0, 1.0
    est = E.theta(ONE, 0.0, h, T, 0, 60000, 14)
    exact_T = (h / (1 + h)) * (1 - np.exp(-(1 + h) * T))
    assert _z(est, exact_T) < 4
    assert est.bias_bound >= (h / (1 + h)) - exact_T


def test_chi_single_vertex_closed_form():
    # chi = 1 / (1 + h)^2
    est = E.chi(ONE, 0.0, 1.0, 40.0, 0, 40000, 15)
    assert _z(est, 0.25) < 4
    est = E.chi(ONE, 0.0, 0.0, 40.0, 0, 40000, 16)
    assert _z(est, 1.0) < 4


def test_dtheta_dh_is_chi():
    a = E.chi(TWO, 1.0, 1.0, 20.0, 1, 2000, 17)
    b = E.dtheta_dh(TWO, 1.0, 1.0, 20.0, 1, 2000, 17)
    assert a == b


def test_theta_indicator_agrees_with_theta():
    kw = dict(T=25.0, L=1, n=60000)
    a = E.theta(TWO, 1.0, 1.0, seed=18, **kw)
    b = E.theta_indicator(TWO, 1.0, 1.0, seed=19, **kw)
    z = abs(a.mean - b.mean) / np.hypot(a.stderr, b.stderr)
    assert z < 4
    assert abs(b.mean - 0.6) < 4 * b.stderr + a.bias_bound


def test_prob_one_green_identity():
    # P(exactly one green) = h * chi
    lam, h = 0.8, 0.7
    p1 = E.prob_one_green(G.lattice(1), lam, h, 25.0, 50, 40000, 21)
    ch = E.chi(G.lattice(1), lam, h, 25.0, 50, 40000, 22)
    z = abs(p1.mean - h * ch.mean) / np.hypot(p1.stderr, h * ch.stderr)
    assert z < 4


def test_dtheta_dlambda_matches_exact():
    est = E.dtheta_dlambda(TWO, 1.0, 1.0, 30.0, 1, 60000, 23, step=0.05)
    assert abs(est.mean - 0.08) < 4 * est.stderr + est.step_bias
    assert est.step_bias == pytest.approx(0.0025)


def test_dtheta_dlambda_requires_positive_h():
    with pytest.raises(DomainError):
        E.dtheta_dlambda(TWO, 1.0, 0.0, 10.0, 1, 100, 24)


def test_chi_monotone_decreasing_in_h_pointwise():
    # the mass sample is h-independent, so the reweighted mean is exactly
    # monotone along a shared seed
    vals = [E.chi(G.lattice(1), 0.9, h, 15.0, 30, 3000, 25).mean
            for h in (0.0, 0.3, 1.0, 3.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_worker_invariance():
    for fn in (E.theta, E.chi, E.prob_one_green):
        a = fn(G.lattice(1), 1.1, 0.5, 12.0, 25, 800, 26, workers=1)
        b = fn(G.lattice(1), 1.1, 0.5, 12.0, 25, 800, 26, workers=3)
        assert a == b


def test_quality_error_on_tiny_budget():
    with pytest.raises(QualityError):
        E.chi(G.lattice(1), 2.5, 0.0, 40.0, 80, 200, 27, budget=5)


def test_flagged_replicas_surface_in_theta_bias():
    est = E.theta(G.lattice(1), 2.5, 0.2, 30.0, 8, 2000, 28, flag_tol=1.0)
    assert est.flagged > 0
    assert est.bias_bound > np.exp(-0.2 * 30.0)


def test_theta_max_transitive_graph():
    res = E.theta_max(TWO, 1.0, 1.0, 25.0, 1, 20000, 29)
    assert len(res.per_site) == 2
    assert res.argmax in (0, 1)
    means = [e.mean for _, e in res.per_site]
    assert res.max_estimate.mean == max(means)
    # vertex-transitive: both sites estimate the same theta
    assert abs(means[0] - means[1]) < 4 * np.hypot(
        res.per_site[0][1].stderr, res.per_site[1][1].stderr)
    assert abs(res.max_estimate.mean - 0.6) < 0.02


def test_theta_max_site_cap():
    with pytest.raises(ResourceError):
        E.theta_max(G.lattice(2), 0.5, 0.5, 5.0, 30, 100, 30, site_cap=10)


def test_estimate_reduction_fields():
    est = E.theta(TWO, 1.0, 1.0, 20.0, 1, 5000, 31)
    assert est.n == 5000
    assert est.stderr > 0
    assert 0.0 <= est.flagged <= 1.0
