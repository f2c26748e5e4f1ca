import numpy as np
import pytest

from aggtrack.errors import MissingConstants, MissingOracle
from aggtrack.graph import complete_graph, ring_graph
from aggtrack.metrics import (
    attach_oracle, average_regret, consensus_error, cost_gap_check, cumulative_violation_bound,
    dynamic_regret, lemma_monitors, lemma_rhs, loglinear_fit, plateau_variation, positive_part,
    summarize_trials, violation_bound, violation_profile, write_trace_csv,
)
from aggtrack.oracle import solve_stream
from aggtrack.pat import AlgorithmParams, init, run_horizon, simulate
from aggtrack.problem import ProblemConstants, VariationBounds, static_stream
from aggtrack.quadratic import exact_constants

from helpers import scalar_quadratic, static_scalar_stream


def scalar_run(alpha=0.2, delta=0.3, x0=1.5, T=40):
    stream = static_scalar_stream(n_agents=1, horizon=T)
    run = simulate(complete_graph(1), stream, AlgorithmParams(alpha, delta), [[x0]], T=T)
    attach_oracle(run.traces, solve_stream(stream, tol=1e-14, rounds=range(T + 1)).solutions)
    return run


def test_regret_requires_oracle():
    stream = static_scalar_stream(n_agents=1, horizon=5)
    run = simulate(complete_graph(1), stream, AlgorithmParams(0.1, 0.5), [[1.0]])
    with pytest.raises(MissingOracle):
        dynamic_regret(run.traces)
    with pytest.raises(MissingOracle):
        run.traces[0].z


def test_scalar_regret_is_a_geometric_sum():
    # cost x^2, optimum 0: increments x_t^2 = x0^2 r^(2t) with r = 1 - 2 alpha delta
    alpha, delta, x0, T = 0.2, 0.3, 1.5, 40
    run = scalar_run(alpha, delta, x0, T)
    r2 = (1 - 2 * alpha * delta) ** 2
    expected = x0**2 * r2 * (1 - r2**T) / (1 - r2)
    assert dynamic_regret(run.traces) == pytest.approx(expected, rel=1e-10)
    avg = average_regret(run.traces)
    assert len(avg) == T and avg[-1] == pytest.approx(expected / T)
    # the gap equals the smoothness bound exactly here (L1 = 2)
    np.testing.assert_allclose(cost_gap_check(run.traces, 2.0), 0.0, atol=1e-12)


def test_converged_start_has_no_regret():
    inst = scalar_quadratic(3, c=[1.0, 0.0, -2.0], b=0.5)
    stream = static_stream(inst, 30)
    ss = solve_stream(stream, tol=1e-14)
    sol = ss.solutions[0]
    run = init(ring_graph(3), stream, AlgorithmParams(0.3, 0.5), sol.x_star)
    # start with consensual trackers as well: s_i = sigma*, y_i = mean grad2
    g2 = inst.grad2(sol.x_star, np.broadcast_to(sol.sigma_star, (3, 1)))
    for st in run.states:
        st.s, st.y = sol.sigma_star.copy(), g2.mean(axis=0)
    run._phi = inst.phi(sol.x_star)
    run._g2 = inst.grad2(sol.x_star, np.array([st.s for st in run.states]))
    run_horizon(run, 29)
    attach_oracle(run.traces, ss.solutions)
    assert abs(dynamic_regret(run.traces)) <= 1e-10


def test_consensus_and_positive_part():
    assert consensus_error(np.array([[1.0], [1.0]])) == 0.0
    assert consensus_error(np.array([[0.0], [2.0]])) == pytest.approx(np.sqrt(2))
    np.testing.assert_array_equal(positive_part(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])


def test_violation_bounds_closed_form():
    g, N, d = 0.3, 4, 0.2
    per = violation_bound(g, N, d, np.arange(1, 51))
    assert violation_bound(g, N, d, 0) == 0.0
    np.testing.assert_allclose(cumulative_violation_bound(g, N, d, np.arange(1, 51)), np.cumsum(per))
    assert violation_bound(0.0, N, d, 10) == 0.0


def test_feasible_trajectory_has_zero_profile():
    stream = static_stream(scalar_quadratic(2, c=[3.0, -3.0], lower=-1.0, upper=1.0), 20)
    run = simulate(complete_graph(2), stream, AlgorithmParams(0.5, 0.5), [[0.0], [0.0]])
    prof = violation_profile(run.traces, gamma=0.0, delta=0.5, n_agents=2)
    assert np.all(prof["per_round"] == 0) and np.all(prof["cumulative"] == 0)
    assert prof["holds"]


def test_lemma_rhs_static_has_no_variation_term():
    sc = dict(alpha=0.5, delta=0.5, mu=1.0, L1=2.0, L2=1.0, L3=1.0, rho=0.0, N=2,
              zeta=0.0, eta=0.0, omega=0.0)
    rhs = lemma_rhs((0.0, 0.0, 0.0), sc)
    assert rhs == (0.0, 0.0, 0.0, 0.0)
    assert lemma_rhs((1.0, 0.0, 0.0), sc)[0] == pytest.approx(1 - 0.5 * 1.0 * 0.5)
    printed = lemma_rhs((1.0, 0.0, 0.0), {**sc, "L3": 2.0})[3]
    corrected = lemma_rhs((1.0, 0.0, 0.0), {**sc, "L3": 2.0}, lemma4="corrected")[3]
    assert corrected > printed


def test_scalar_static_lemma_slack_nonnegative():
    run = scalar_run()
    consts = ProblemConstants(2.0, 2.0, 1.0, 1.0)
    rep = lemma_monitors(run.traces, consts, VariationBounds(), 0.2, 0.3, 0.0, 1)
    assert rep.ok and rep.lemma_slack.shape == (40, 4)
    assert run.traces[5].lemma_slack[1] >= 0


def test_monitors_need_constants():
    run = scalar_run(T=3)
    with pytest.raises(MissingConstants):
        lemma_monitors(run.traces, None, VariationBounds(), 0.2, 0.3, 0.0, 1)


def test_multi_agent_static_monitors():
    inst = scalar_quadratic(3, c=[1.0, -0.5, 2.0], b=0.2, kappa=0.8, lower=-1.0, upper=1.0)
    c = exact_constants(inst)
    net = ring_graph(3)
    stream = static_stream(inst, 60)
    run = simulate(net, stream, AlgorithmParams(c.max_alpha, 0.05), [[0.9], [-0.9], [0.0]])
    attach_oracle(run.traces, solve_stream(stream, tol=1e-14, rounds=range(61)).solutions)
    rep = lemma_monitors(run.traces, c, VariationBounds(), c.max_alpha, 0.05, net.rho, 3)
    assert rep.ok, (rep.violations[:3], rep.z_violations[:3])


def test_series_helpers(tmp_path):
    v = 3.0 * 0.9 ** np.arange(100)
    slope, r2 = loglinear_fit(v)
    assert slope == pytest.approx(np.log(0.9)) and r2 == pytest.approx(1.0)
    assert plateau_variation(np.ones(50)) == 0.0
    assert plateau_variation(np.r_[np.zeros(80), np.linspace(1.0, 1.1, 20)]) == pytest.approx(0.1 / 1.05)
    mean, std = summarize_trials([[1.0, 2.0], [3.0, 2.0]])
    np.testing.assert_array_equal(mean, [2.0, 2.0])
    np.testing.assert_array_equal(std, [1.0, 0.0])
    run = scalar_run(T=5)
    path = tmp_path / "trace.csv"
    write_trace_csv(path, run.traces)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("t,cost_alg,cost_opt,regret_inc,cum_regret,avg_regret,err_x")
    assert "lemma4_slack" in lines[0] and len(lines) == 7


def test_feasible_iterate_beating_oracle_is_flagged():
    from aggtrack.errors import InvariantViolation

    run = scalar_run(T=3)
    sols = solve_stream(static_scalar_stream(n_agents=1, horizon=3), tol=1e-14, rounds=range(4)).solutions
    sols[2].cost = 5.0
    with pytest.raises(InvariantViolation) as err:
        attach_oracle(run.traces, sols)
    assert err.value.name == "oracle_optimality" and err.value.round_index == 2
