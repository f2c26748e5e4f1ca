import numpy as np
import pytest

from aggtrack.errors import NoConvergence
from aggtrack.oracle import solve_instant, solve_stream
from aggtrack.problem import global_cost, static_stream
from aggtrack.projection import contains
from aggtrack.quadratic import QuadraticInstant, drifting_quadratic_stream, exact_constants, random_quadratic
from aggtrack.scenarios import BasketballConfig, basketball_stream

from helpers import kkt_brute_force


def two_agent(c, b):
    return QuadraticInstant(np.broadcast_to(np.eye(2), (2, 2, 2)), c, np.ones(2),
                            np.broadcast_to(b, (2, 2)), np.broadcast_to(np.eye(2), (2, 2, 2)))


def test_origin_is_optimal_when_targets_vanish():
    sol = solve_instant(two_agent(np.zeros((2, 2)), np.zeros(2)), np.ones((2, 2)))
    np.testing.assert_allclose(sol.x_star, 0.0, atol=1e-8)


def test_matches_normal_equations():
    inst = two_agent(np.ones((2, 2)), np.ones(2))
    # per coordinate: (I + 11^T/N^2 * sum kappa) x = c + (1/N) sum kappa b
    A = np.eye(2) + np.full((2, 2), 2 / 4)
    x = np.linalg.solve(A, np.ones(2) + 1.0)
    sol = solve_instant(inst, tol=1e-12, lipschitz=exact_constants(inst).L1)
    np.testing.assert_allclose(sol.x_star[:, 0], x, atol=1e-10)
    np.testing.assert_allclose(sol.sigma_star, x.mean(), atol=1e-10)


@pytest.mark.parametrize("seed", range(6))
def test_boxed_quadratics_match_active_set_enumeration(seed):
    rng = np.random.default_rng(seed)
    inst = random_quadratic(rng, n_agents=2 + seed % 2, dim=2, box=True)
    sol = solve_instant(inst, tol=1e-12, lipschitz=exact_constants(inst).L1)
    ref = kkt_brute_force(inst)
    np.testing.assert_allclose(sol.x_star, ref, atol=1e-8)


def test_certificates():
    rng = np.random.default_rng(9)
    inst = random_quadratic(rng, 3, 2, box=True)
    c = exact_constants(inst)
    sol = solve_instant(inst, tol=1e-10, lipschitz=c.L1)
    assert sol.residual <= 1e-10
    assert all(contains(inst.feasible_set(i), sol.x_star[i], 1e-8) for i in range(3))
    assert sol.fixed_point_gap(inst, c.max_alpha) <= 1e-9
    pts = inst.lower + rng.random((100, 3, 2)) * (inst.upper - inst.lower)
    assert all(sol.cost <= global_cost(inst, p) + 1e-12 for p in pts)


def test_backtracking_without_lipschitz_constant():
    rng = np.random.default_rng(2)
    inst = random_quadratic(rng, 3, 2, box=True)
    a = solve_instant(inst, tol=1e-11)
    b = solve_instant(inst, tol=1e-11, lipschitz=exact_constants(inst).L1)
    np.testing.assert_allclose(a.x_star, b.x_star, atol=1e-8)


def test_iteration_cap_raises_with_best_iterate():
    inst = random_quadratic(np.random.default_rng(0), 3, 2)
    with pytest.raises(NoConvergence) as err:
        solve_instant(inst, tol=1e-14, max_iter=3, t=7)
    assert err.value.best is not None and err.value.round_index == 7


def test_stream_static_and_single_round():
    inst = random_quadratic(np.random.default_rng(1), 2, 2)
    ss = solve_stream(static_stream(inst, 10))
    assert len(ss.solutions) == 10 and ss.zeta == 0.0 and np.all(ss.zeta_t == 0)
    one = solve_stream(static_stream(inst, 1))
    assert len(one.solutions) == 1 and len(one.zeta_t) == 0


def test_stream_zeta_and_sigma_consistency():
    stream = drifting_quadratic_stream(3, box=True, horizon=40)
    ss = solve_stream(stream, tol=1e-12, rounds=range(41))
    assert len(ss.zeta_t) == 40 and ss.zeta == pytest.approx(max(ss.zeta_t))
    for sol in ss.solutions[::10]:
        inst = stream.instant_at(sol.t)
        np.testing.assert_allclose(inst.phi(sol.x_star).mean(0), sol.sigma_star)


def test_basketball_instant_kkt_residual():
    stream = basketball_stream(BasketballConfig(horizon=50), 0)
    inst = stream.instant_at(10)
    sol = solve_instant(inst, stream.initial_point(), tol=1e-7)
    gap = np.linalg.norm(inst.project(sol.x_star - sol.g_star) - sol.x_star)
    assert gap <= 1e-6
