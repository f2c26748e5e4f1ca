import dataclasses

import numpy as np
import pytest

from aggtrack.errors import InvalidConfig
from aggtrack.oracle import solve_instant
from aggtrack.pat import AlgorithmParams, simulate
from aggtrack.problem import check_gradients, measure_variations
from aggtrack.quadratic import exact_constants
from aggtrack.scenarios import (
    BasketballConfig, BasketballInstant, SurveillanceConfig, SurveillanceStream, basketball_network,
    basketball_stream, config_from_dict, huber_grad, huber_norm, monte_carlo, surveillance_network,
    surveillance_weights,
)

SMALL = SurveillanceConfig(n_agents=5, horizon=60, trials=2, edge_prob=0.6)


def test_circular_intruders_and_nonempty_box():
    s = SurveillanceStream(SMALL, 3)
    for t in (0, 17, 60):
        np.testing.assert_allclose(s.intruders(t) - s.p_center, [np.cos(t / 100), np.sin(t / 100)] * np.ones((5, 1)))
        lo, up = s.box(t)
        assert np.all(up - lo >= SMALL.min_box_width - 1e-12)
    lo, up = s.box(0)
    np.testing.assert_array_equal(lo, [0, 0])
    np.testing.assert_array_equal(up, [20, 20])


def test_surveillance_cost_matches_definition():
    s = SurveillanceStream(SMALL, 0)
    t = 9
    inst = s.instant_at(t)
    rng = np.random.default_rng(0)
    x = rng.random((5, 2)) * 10
    sig = rng.random(2) * 10
    p, b = s.intruders(t), s.target(t)
    ref = (0.5 * np.sum((x - p) ** 2, 1) + 0.5 * np.sum((x - b) ** 2, 1)
           + 10 / 10 * np.sum((sig - b) ** 2))
    np.testing.assert_allclose(inst.cost(x, np.broadcast_to(sig, (5, 2))), ref)
    np.testing.assert_allclose(inst.phi(x), s.beta(t)[:, None] * x)
    assert check_gradients(inst, x)["ok"]


def test_weight_rules():
    p = np.array([[0.0, 0.0], [3.0, 4.0], [0.5, 0.0]])
    b = np.zeros(2)
    inv = surveillance_weights(p, b, SurveillanceConfig())
    np.testing.assert_allclose(inv, [1.0, 1 / 25, 1.0])
    lit = surveillance_weights(p, b, SurveillanceConfig(beta_rule="literal"))
    np.testing.assert_allclose(lit, [0.0, 1.0, 0.25])
    const = surveillance_weights(p, b, SurveillanceConfig(time_varying_beta=False))
    np.testing.assert_array_equal(const, 1.0)


def test_closed_form_constants_are_exact():
    s = SurveillanceStream(SMALL, 1)
    c = s.constants
    ref = exact_constants([s.instant_at(t) for t in range(61)])
    for name in ("mu", "L1", "L2", "L3"):
        assert getattr(c, name) == pytest.approx(getattr(ref, name), rel=1e-10)


def test_variations_dominate_sampled_changes():
    s = SurveillanceStream(SMALL, 2)
    lo, up = s.region()
    rng = np.random.default_rng(0)
    samples = lo + rng.random((5, 40, 2)) * (up - lo)
    for t in (0, 30, 59):
        eta, omega, gamma = measure_variations(s, t, samples)
        assert eta <= s.bounds.at("eta", t) + 1e-12
        assert omega <= s.bounds.at("omega", t) + 1e-12
        assert gamma == pytest.approx(s.bounds.at("gamma", t), abs=1e-12)


def test_static_mode_has_no_variation():
    s = SurveillanceStream(SMALL, 2, mode="static")
    assert s.static
    lo, up = s.region()
    samples = lo + np.random.default_rng(1).random((5, 10, 2)) * (up - lo)
    assert measure_variations(s, 5, samples) == (0.0, 0.0, 0.0)
    assert s.bounds.eta == s.bounds.omega == s.bounds.gamma == 0.0


def test_constant_and_varying_weights_give_distinct_formations():
    finals = []
    for tv in (False, True):
        cfg = dataclasses.replace(SMALL, time_varying_beta=tv, horizon=300, alpha=0.4)
        s = SurveillanceStream(cfg, 4, mode="static")
        finals.append(solve_instant(s.instant_at(0), tol=1e-10, lipschitz=s.constants.L1).x_star)
    assert np.linalg.norm(finals[0] - finals[1]) > 1e-2


def test_monte_carlo_single_trial_has_zero_std():
    r = monte_carlo(SMALL, trials=1, mode="online")
    assert r.seeds == [0] and np.all(r.std == 0) and len(r.mean) == SMALL.horizon


def test_monte_carlo_threads_do_not_change_results():
    a = monte_carlo(SMALL, trials=2, mode="static")
    b = monte_carlo(SMALL, trials=2, mode="static", workers=2)
    np.testing.assert_array_equal(a.mean, b.mean)


def test_config_from_dict():
    cfg = config_from_dict(SurveillanceConfig, {"n_agents": 5, "box_lower0": [1, 1]})
    assert cfg.box_lower0 == (1, 1)
    with pytest.raises(InvalidConfig):
        config_from_dict(SurveillanceConfig, {"agents": 5})
    with pytest.raises(InvalidConfig):
        config_from_dict(SurveillanceConfig, {"delta": 1.0})


def test_huber_is_smooth_norm():
    r = 1e-3
    v = np.array([[3.0, 4.0], [0.0, 0.0], [r / 2, 0.0]])
    np.testing.assert_allclose(huber_norm(v, r), [5.0, r / 2, (r / 2) ** 2 / (2 * r) + r / 2])
    np.testing.assert_allclose(huber_grad(v, r)[0], [0.6, 0.8])
    # continuity at the radius
    e = np.array([[r, 0.0]])
    assert huber_norm(e, r)[0] == pytest.approx(r)


def test_basketball_weights_saturate_at_basket():
    cfg = BasketballConfig()
    s = basketball_stream(cfg, 0)
    s.offenders = lambda t: np.array([cfg.basket, [10.0, 3.0]])
    beta = s.beta(0)
    assert beta[0] == cfg.beta_max and 0 < beta[1] < cfg.beta_max


def test_basketball_vertical_branches():
    cfg = BasketballConfig()
    p = np.array([[10.0, 3.0], [10.0, 12.0]])
    inst = BasketballInstant(p, np.zeros(2), np.ones(2), cfg)
    # below the basket line: v_B <= x_v <= p_v is reversed into p_v <= x_v <= v_B
    np.testing.assert_allclose(inst.lower[0], [10.5, 3.0])
    np.testing.assert_allclose(inst.upper[0], [28.0, 7.5])
    np.testing.assert_allclose(inst.lower[1], [10.5, 7.5])
    np.testing.assert_allclose(inst.upper[1], [28.0, 12.0])
    x = np.array([[11.0, 5.0], [10.0, 13.0]])
    h = inst.constraints(x)
    assert np.all(h[0] <= 0) and h[1, 0] > 0 and h[1, 2] > 0


def test_basketball_offender_speed_premise():
    cfg = BasketballConfig()
    s = basketball_stream(cfg, 5)
    p = np.array([s.offenders(t) for t in range(cfg.horizon + 1)])
    assert np.max(np.abs(np.diff(p[:, :, 0], axis=0))) <= cfg.eps_h * cfg.delta


def test_basketball_run_is_feasible():
    cfg = dataclasses.replace(BasketballConfig(), horizon=300)
    s = basketball_stream(cfg, 1)
    run = simulate(basketball_network(cfg), s, AlgorithmParams(cfg.alpha, cfg.delta), s.initial_point())
    assert not run.violations
    for tr in run.traces:
        assert np.all(tr.x[:, 0] >= s.offenders(tr.t)[:, 0])
        assert np.all(tr.x[:, 1] >= 0) and np.all(tr.x[:, 1] <= cfg.field_size[1])


def test_surveillance_network_connected():
    net = surveillance_network(SurveillanceConfig())
    assert net.n_agents == 50 and 0 <= net.rho < 1


def test_anchored_box_stays_near_its_start():
    cfg = dataclasses.replace(SurveillanceConfig(), horizon=5000)
    s = SurveillanceStream(cfg, 2)
    v = s._box_at(np.arange(0, 5001, 10))
    assert np.max(np.abs(v - [0, 0, 20, 20])) <= cfg.box_step
    walk = SurveillanceStream(dataclasses.replace(cfg, box_walk="random_walk"), 2)
    assert np.max(np.abs(walk._box_at(np.arange(0, 5001, 10)) - [0, 0, 20, 20])) > cfg.box_step
    with pytest.raises(InvalidConfig):
        SurveillanceStream(dataclasses.replace(cfg, box_walk="brownian"), 0)
