"""Small problem builders shared by the tests."""

import numpy as np

from aggtrack.problem import AgentProblem, CallableInstant, ProblemStream, static_stream
from aggtrack.projection import WholeSpace
from aggtrack.quadratic import QuadraticInstant


def scalar_quadratic(n_agents=2, c=None, b=0.0, kappa=1.0, lower=None, upper=None):
    """f_i = 1/2 (x_i - c_i)^2 + kappa/2 (sig - b)^2 with phi = identity, scalar x."""
    c = np.zeros(n_agents) if c is None else np.asarray(c, float)
    return QuadraticInstant(
        Q=np.ones((n_agents, 1, 1)), c=c.reshape(-1, 1), kappa=np.full(n_agents, kappa),
        b=np.full((n_agents, 1), b), W=np.ones((n_agents, 1, 1)),
        lower=None if lower is None else np.full((n_agents, 1), lower),
        upper=None if upper is None else np.full((n_agents, 1), upper),
    )


def weighted_identity_stream(betas, horizon=5):
    """phi_{i,t}(x) = beta_t x with f_i = 1/2 x^2 + 1/2 sig^2 (one agent), beta a list over t."""

    def factory(t):
        beta = betas[t]
        agent = AgentProblem(
            cost=lambda x, s: 0.5 * float(x @ x) + 0.5 * float(s @ s),
            grad1=lambda x, s: x.copy(),
            grad2=lambda x, s: s.copy(),
            phi=lambda x, beta=beta: beta * x,
            jac_phi=lambda x, beta=beta: beta * np.eye(1),
            feasible=WholeSpace(),
        )
        return CallableInstant([agent], dim=1, agg_dim=1)

    return ProblemStream(factory, horizon)


def static_scalar_stream(horizon=100, **kw):
    return static_stream(scalar_quadratic(**kw), horizon)


def kkt_brute_force(inst, tol=1e-10):
    """Minimize a box-constrained quadratic instant by enumerating active sets.

    H and the linear term are recovered from gradient evaluations (exact for
    quadratics), then every free/lower/upper assignment is solved and
    checked against the KKT sign conditions.
    """
    import itertools

    from aggtrack.problem import global_grad

    n_ag, n = inst.n_agents, inst.dim
    m = n_ag * n
    g0 = global_grad(inst, np.zeros((n_ag, n))).ravel()
    H = np.column_stack([global_grad(inst, np.eye(m)[k].reshape(n_ag, n)).ravel() - g0 for k in range(m)])
    H = 0.5 * (H + H.T)
    lo, up = inst.lower.ravel(), inst.upper.ravel()
    best = None
    for pattern in itertools.product((0, 1, 2), repeat=m):
        pattern = np.array(pattern)
        if np.any((pattern == 1) & ~np.isfinite(lo)) or np.any((pattern == 2) & ~np.isfinite(up)):
            continue
        x = np.where(pattern == 1, lo, np.where(pattern == 2, up, 0.0))
        free = pattern == 0
        if free.any():
            rhs = -g0[free] - H[np.ix_(free, ~free)] @ x[~free]
            x[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
        if np.any(x < lo - tol) or np.any(x > up + tol):
            continue
        g = H @ x + g0
        if np.any(g[pattern == 1] < -1e-9) or np.any(g[pattern == 2] > 1e-9):
            continue
        best = x
        break
    return None if best is None else best.reshape(n_ag, n)
