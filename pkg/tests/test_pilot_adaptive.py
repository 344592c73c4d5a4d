import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbit_pricing.env import BernoulliFeedback, make_experiment_instance
from orbit_pricing.errors import ConfigurationError, ProtocolError
from orbit_pricing.pilot_adaptive import (Explore, Pilot, RidgeState, default_eta, paper_confidence_multiplier,
                                          pilot_decide, ridge_update, run_adaptive_pilot, uncertainty)


def state(d=3, eta=0.3, C_w=2.0):
    return RidgeState(d, eta, C_w, 3.5, 1.0, 3.0)


def test_uncertainty_examples():
    s = state()
    x = np.array([0.6, 0.8, 0.0])
    assert uncertainty(s, x) == pytest.approx(2.0)
    assert uncertainty(s, np.zeros(3)) == 0.0
    x = np.array([0.5, 1.0, -0.2])
    s._pending = x
    ridge_update(s, x, 1.0, 0)
    n2 = x @ x
    assert uncertainty(s, x) == pytest.approx(2.0 * math.sqrt(n2) / math.sqrt(1 + n2), rel=1e-12)
    direct = 2.0 * math.sqrt(x @ np.linalg.solve(np.eye(3) + np.outer(x, x), x))
    assert uncertainty(s, x) == pytest.approx(direct, rel=1e-12)


def test_decide_examples():
    s = state()
    assert isinstance(pilot_decide(s, np.array([1.0, 0, 0])), Explore)
    s.theta_hat = np.array([5.0, 0, 0])
    s.C_w = 1e-6
    d = pilot_decide(s, np.array([1.0, 0, 0]))
    assert d == Pilot(3.0)
    with pytest.raises(ConfigurationError):
        pilot_decide(s, np.ones(3), eta=0.7)


def test_repeated_context_flips_within_bound():
    C_w, eta = 2.0, 0.3
    s = state(C_w=C_w, eta=eta)
    x = np.array([0.0, 1.0, 0.0])
    k = 0
    while isinstance(pilot_decide(s, x), Explore):
        ridge_update(s, x, 1.0, 1)
        k += 1
    assert k <= math.ceil(C_w ** 2 / eta ** 2)
    # ||x||^2_{A^-1} = 1/(k+1) for repeated unit x
    assert uncertainty(s, x) == pytest.approx(C_w / math.sqrt(k + 1))


def test_update_examples_and_protocol():
    s = state(d=2)
    x = np.array([1.0, 0.0])
    with pytest.raises(ProtocolError):
        ridge_update(s, x, 1.0, 1)
    assert isinstance(pilot_decide(s, x), Explore)
    ridge_update(s, x, 1.0, 1)
    np.testing.assert_allclose(s.theta_hat, [1.75, 0.0])
    assert isinstance(pilot_decide(s, x), Explore)
    b = s.b.copy()
    ridge_update(s, x, 2.0, 0)
    np.testing.assert_array_equal(s.b, b)
    np.testing.assert_allclose(s.A, [[3.0, 0.0], [0.0, 1.0]])
    s.C_w = 1e-3
    pilot_decide(s, x)
    with pytest.raises(ProtocolError):
        ridge_update(s, x, 1.0, 1)
    s = state(d=2)
    pilot_decide(s, x)
    with pytest.raises(ProtocolError):
        ridge_update(s, x, 4.0, 1)


def test_default_eta_examples():
    assert default_eta(1, 16) == pytest.approx(0.5)
    assert default_eta(4, 4) == 0.5
    assert default_eta(5, 10 ** 5, 0.1) == pytest.approx(0.1 * (5e-5) ** 0.25)
    assert default_eta(5, 10 ** 5, 0.1) == pytest.approx(0.00841, abs=1e-5)
    with pytest.raises(ConfigurationError):
        default_eta(0, 10)


def test_paper_multiplier():
    assert paper_confidence_multiplier(1.0, 3.5, 1.0) == pytest.approx(32 * 4.5)


def test_inverse_refresh_and_drift():
    rng = np.random.default_rng(0)
    s = state(d=6, C_w=100.0)
    X = rng.normal(size=(1000, 6))
    for x in X:
        pilot_decide(s, x)
        ridge_update(s, x, 1.0, int(rng.random() < 0.5))
    assert s.n_explore == 1000
    assert s.check(X)
    np.testing.assert_allclose(s.A_inv, np.linalg.inv(s.A), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 30))
def test_uncertainty_nonincreasing(seed, n):
    rng = np.random.default_rng(seed)
    s = state(d=4, C_w=50.0)
    probe = rng.normal(size=4)
    prev = uncertainty(s, probe)
    for _ in range(n):
        x = rng.normal(size=4)
        pilot_decide(s, x)
        ridge_update(s, x, 1.0, 1)
        w = uncertainty(s, probe)
        assert w <= prev + 1e-12
        prev = w


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.floats(1.0, 20.0))
def test_blocked_driver_matches_round_by_round(seed, C_w):
    inst = make_experiment_instance("sphere_iid", 4)
    rng = np.random.default_rng(seed)
    T = 3000
    X = inst.sample_contexts(rng, T)
    u = inst.utility(X)
    Ue, Ud = rng.random(T), rng.random(T)
    fb = BernoulliFeedback(u, Ud, inst.tail)
    res = run_adaptive_pilot(RidgeState(4, 0.3, C_w, 3.5, 1, 3), X, Ue, fb)
    s = RidgeState(4, 0.3, C_w, 3.5, 1, 3)
    for t in range(T):
        d = pilot_decide(s, X[t])
        if isinstance(d, Explore):
            assert res.explore[t]
            p = Ue[t] * 3.5
            y = fb.purchase_one(t, p)
            assert res.price[t] == p and res.purchase[t] == y
            ridge_update(s, X[t], p, y)
        else:
            assert not res.explore[t]
            assert res.u_tilde[t] == pytest.approx(d.u_tilde, abs=1e-12)


def test_pseudo_response_unbiased():
    inst = make_experiment_instance("sphere_iid", 5)
    rng = np.random.default_rng(7)
    x = inst.sample_contexts(rng, 1)[0]
    n = 100_000
    u = np.full(n, x @ inst.theta)
    fb = BernoulliFeedback(u, rng.random(n), inst.tail)
    p = rng.random(n) * 3.5
    y = fb.purchase(np.arange(n), p)
    z = 3.5 * y
    assert abs(z.mean() - x @ inst.theta) <= 3 * z.std() / math.sqrt(n)
