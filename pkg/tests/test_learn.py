import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustdmb.learn import (ConfigError, ProtocolError, RegretLedger, comparator_optimum,
                             logistic_model, loss_gradient, loss_value, make_rule,
                             offline_minimizer, project, quadratic_model, sample_payloads,
                             update_step)


@pytest.fixture(scope="module")
def logi():
    return logistic_model([1.0, -2.0, 0.5], 1.0, 2.0, seed=3, n_oracle=50_000)


def fd_gradient(model, w, z, h=1e-6):
    return np.array([(loss_value(model, w + h * e, z) - loss_value(model, w - h * e, z)) / (2 * h)
                     for e in np.eye(model.dim)])


def test_quadratic_gradient_matches_finite_differences():
    model = quadratic_model([0.1, 0.2, 0.3], 1.0, 1.0)
    rng = np.random.default_rng(0)
    for _ in range(30):
        w, z = project(rng.normal(size=3), 1.0), rng.normal(size=3)
        assert np.max(np.abs(loss_gradient(model, w, z) - fd_gradient(model, w, z))) < 1e-6


def test_logistic_gradient_matches_finite_differences(logi):
    rng = np.random.default_rng(1)
    for _ in range(30):
        w = project(rng.normal(size=3), 2.0)
        z = np.append(rng.normal(size=3), rng.choice([-1.0, 1.0]))
        assert np.max(np.abs(loss_gradient(logi, w, z) - fd_gradient(logi, w, z))) < 1e-6


def test_quadratic_values():
    model = quadratic_model([0.0, 0.0], 1.0, 1.0)
    assert loss_value(model, np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0
    assert loss_gradient(model, np.array([1.0, 0.0]), np.array([0.0, 1.0])).tolist() == [1.0, -1.0]


def test_dimension_mismatch_rejected(logi):
    model = quadratic_model([0.0, 0.0], 1.0, 1.0)
    with pytest.raises(ConfigError):
        loss_value(model, np.zeros(3), np.zeros(2))
    with pytest.raises(ConfigError):
        loss_gradient(logi, np.zeros(3), np.zeros(3))  # label missing


@settings(max_examples=300, deadline=None)
@given(w=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6), R=st.floats(1e-3, 50))
def test_projection_properties(w, R):
    w = np.array(w)
    p = project(w, R)
    assert np.linalg.norm(p) <= R * (1 + 1e-14)
    assert project(p, R).tobytes() == p.tobytes()
    if np.linalg.norm(w) <= R:
        assert p.tobytes() == w.tobytes()


def test_projection_rejects_nonpositive_radius():
    with pytest.raises(ConfigError):
        project(np.ones(2), 0.0)


def test_quadratic_model_constants():
    model = quadratic_model([3.0, 4.0], 0.5, 1.0)
    assert np.allclose(model.mean, [0.6, 0.8])
    assert np.allclose(comparator_optimum(model), model.w_star)
    assert model.lipschitz == 1.0 and model.variance == pytest.approx(2 * 0.25)
    assert model.diameter == 2.0


def test_quadratic_variance_matches_samples():
    model = quadratic_model([0.2, -0.1, 0.0], 0.7, 1.0)
    Z = sample_payloads(model, np.random.default_rng(0), 200_000)
    G = model.w_star - Z
    assert np.sum(G.var(axis=0)) == pytest.approx(model.variance, rel=0.02)


def test_offline_minimizer_has_zero_gradient_inside_ball(logi):
    wide = logistic_model([1.0, -2.0, 0.5], 1.0, 5.0, seed=3, n_oracle=2_000)
    Z = sample_payloads(wide, np.random.default_rng(9), 50_000)
    w = offline_minimizer(wide, Z)
    full = np.mean([loss_gradient(wide, w, z) for z in Z], axis=0)
    assert np.linalg.norm(w) < 5.0
    assert np.linalg.norm(full) < 1e-6


def test_offline_minimizer_on_boundary():
    model = logistic_model([3.0, 3.0], 1.0, 0.5, seed=1, n_oracle=20_000)
    assert np.linalg.norm(model.w_star) == pytest.approx(0.5, abs=1e-9)
    assert model.w_star[0] > 0 and model.w_star[1] > 0


def test_comparator_beats_nearby_points(logi):
    Z = sample_payloads(logi, np.random.default_rng(5), 20_000)

    def risk(w):
        return np.mean([loss_value(logi, w, z) for z in Z[:5000]])
    base = risk(logi.w_star)
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert risk(project(logi.w_star + 0.3 * rng.normal(size=3), 2.0)) >= base - 1e-3


def test_step_size_schedule():
    model = quadratic_model([0.1, 0.1], 1.0, 1.0)
    rule = make_rule(model, b=4)
    assert rule.sigma_eff == pytest.approx(math.sqrt(2 / 4))
    assert rule.eta(1) == pytest.approx(2 / (2 + rule.sigma_eff))
    assert rule.eta(100) < rule.eta(1)


def test_update_step_projected_gradient():
    model = quadratic_model([0.0, 0.0], 0.0, 1.0)
    rule = make_rule(model, 1)
    nxt = update_step(rule, np.array([-10.0, 0.0]), 1)
    assert nxt.steps == 1 and np.allclose(nxt.w, [1.0, 0.0])
    assert rule.steps == 0 and np.all(rule.w == 0)  # old value untouched


def test_update_step_dual_averaging():
    model = quadratic_model([0.0, 0.0], 1.0, 10.0)
    rule = make_rule(model, 1, kind="dual-averaging")
    r1 = update_step(rule, np.array([1.0, 0.0]), 1)
    r2 = update_step(r1, np.array([1.0, 0.0]), 1)
    assert np.allclose(r1.grad_sum, [1, 0]) and np.allclose(r2.grad_sum, [2, 0])
    assert r2.w[0] == pytest.approx(-2.0 * rule.eta(3))


def test_noisy_rule_is_reproducible():
    model = quadratic_model([0.0, 0.0], 1.0, 1.0)
    a = update_step(make_rule(model, 1, noise=0.5, seed=4), np.ones(2), 1)
    b = update_step(make_rule(model, 1, noise=0.5, seed=4), np.ones(2), 1)
    c = update_step(make_rule(model, 1, noise=0.5, seed=5), np.ones(2), 1)
    assert a.w.tobytes() == b.w.tobytes() != c.w.tobytes()


def test_empty_batch_is_a_protocol_error():
    model = quadratic_model([0.0], 1.0, 1.0)
    with pytest.raises(ProtocolError):
        update_step(make_rule(model), np.zeros(1), 0)


def test_make_rule_validation():
    model = quadratic_model([0.0], 1.0, 1.0)
    with pytest.raises(ConfigError):
        make_rule(model, 0)
    with pytest.raises(ConfigError):
        make_rule(model, 1, kind="adam")


def test_ledger():
    led = RegretLedger()
    led.add(2, 0, 3.0, 1.0, 0)
    led.add(0, 1, 1.5, 1.0, 0)
    led.add(1, 1, 1.0, 1.0, 1)
    assert led.cumulative() == 2.5
    assert led.regret_over([False, True, True]) == 0.5
    assert led.in_seq_order().seq == [0, 1, 2]
