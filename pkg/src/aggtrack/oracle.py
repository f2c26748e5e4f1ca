"""Centralized per-round solver giving x*_t, sigma*_t and g*_t.

Projected gradient descent on x -> sum_i f_i(x_i, sigma(x)) over the
product of the agents' sets. The step is 1/L with L the declared Lipschitz
constant of the global gradient; without one, L is found by backtracking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence
from .problem import aggregate, global_cost, global_grad

DEFAULT_TOL = 1e-9
MAX_ITER = 100_000


@dataclass
class OracleSolution:
    t: int
    x_star: np.ndarray
    sigma_star: np.ndarray
    g_star: np.ndarray
    cost: float
    residual: float
    iterations: int
    step: float = 0.0

    def fixed_point_gap(self, instant, alpha):
        """|| P[x* - alpha g*] - x* || for an arbitrary step alpha."""
        return float(np.linalg.norm(instant.project(self.x_star - alpha * self.g_star) - self.x_star))


def _finish(instant, x, t, residual, it, L):
    return OracleSolution(
        t=t, x_star=x, sigma_star=aggregate(instant, x), g_star=global_grad(instant, x),
        cost=global_cost(instant, x), residual=residual, iterations=it, step=1.0 / L,
    )


def solve_instant(instant, warm_start=None, tol=DEFAULT_TOL, lipschitz=None,
                  max_iter=MAX_ITER, t=0):
    """Minimize the global cost of one instant.

    Stops when ||x - P[x - grad/L]|| <= tol. Raises NoConvergence carrying
    the best iterate when ``max_iter`` is reached.
    """
    shape = (instant.n_agents, instant.dim)
    if warm_start is None:
        x = instant.project(np.zeros(shape))
    else:
        x = np.asarray(warm_start, dtype=float).reshape(shape)
        if not np.all(np.isfinite(x)):
            raise ValueError("warm start must be finite")
        x = instant.project(x)
    fixed = lipschitz is not None
    L = float(lipschitz) if fixed else None
    g = global_grad(instant, x)
    f = global_cost(instant, x) if not fixed else None
    if L is None:
        probe = instant.project(x - 1e-6 * g)
        dg = global_grad(instant, probe) - g
        dx = np.linalg.norm(probe - x)
        L = max(float(np.linalg.norm(dg) / dx) if dx > 0 else 1.0, 1e-8)
    best, best_res = x, np.inf
    for it in range(1, max_iter + 1):
        if fixed:
            x_new = instant.project(x - g / L)
        else:
            while True:
                x_new = instant.project(x - g / L)
                d = x_new - x
                f_new = global_cost(instant, x_new)
                if f_new <= f + float(np.sum(g * d)) + 0.5 * L * float(np.sum(d * d)) + 1e-15 * abs(f):
                    break
                L *= 2.0
        res = float(np.linalg.norm(x_new - x))
        if res < best_res:
            best, best_res = x, res
        if res <= tol:
            return _finish(instant, x, t, res, it, L)
        x = x_new
        g = global_grad(instant, x)
        if not fixed:
            f = f_new
            L *= 0.9
    raise NoConvergence(f"projected gradient did not reach tol={tol} in {max_iter} iterations",
                        best=best, residual=best_res, round_index=t)


@dataclass
class StreamSolution:
    solutions: list
    zeta_t: np.ndarray

    @property
    def zeta(self):
        return float(np.max(self.zeta_t)) if len(self.zeta_t) else 0.0

    def by_round(self):
        return {s.t: s for s in self.solutions}


def solve_stream(stream, tol=DEFAULT_TOL, rounds=None, warm_start=None, lipschitz=None,
                 max_iter=MAX_ITER):
    """Solve consecutive rounds with warm starts; also returns zeta_t = ||x*_{t+1} - x*_t||."""
    if rounds is None:
        rounds = range(stream.horizon)
    if lipschitz is None and getattr(stream, "constants", None) is not None:
        lipschitz = stream.constants.L1
    sols = []
    x = warm_start
    cached = None
    for t in rounds:
        inst = stream.instant_at(t)
        if getattr(stream, "static", False) and cached is not None:
            sol = OracleSolution(**{**cached.__dict__, "t": t})
        else:
            try:
                sol = solve_instant(inst, x, tol=tol, lipschitz=lipschitz, max_iter=max_iter, t=t)
            except NoConvergence as exc:
                exc.round_index = t
                raise
            cached = sol
        sols.append(sol)
        x = sol.x_star
    zeta_t = np.array([np.linalg.norm(b.x_star - a.x_star) for a, b in zip(sols[:-1], sols[1:])])
    return StreamSolution(sols, zeta_t)
