"""Quadratic aggregative instants with exactly computable constants.

Agent i has

    f_i(x_i, sig) = 1/2 (x_i - c_i)^T Q_i (x_i - c_i) + kappa_i/2 |sig - b_i|^2 + const_i
    phi_i(x_i)    = W_i x_i

and a box X_i = [lower_i, upper_i] (infinite bounds allowed). The surveillance
scenario and the fuzzed test problems are both members of this family, which
is what lets the analysis constants (mu, L1, L2, L3) and the variation bounds
be evaluated exactly instead of estimated.
"""

from __future__ import annotations

import itertools

import numpy as np

from .problem import ProblemConstants, ProblemInstant, agent_index
from .projection import Box

VACUOUS = -1.0


class QuadraticInstant(ProblemInstant):
    def __init__(self, Q, c, kappa, b, W, const=None, lower=None, upper=None):
        self.Q = np.asarray(Q, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.kappa = np.asarray(kappa, dtype=float).reshape(-1)
        self.b = np.asarray(b, dtype=float)
        self.W = np.asarray(W, dtype=float)
        n_ag, n = self.c.shape
        d = self.b.shape[1]
        if self.Q.shape != (n_ag, n, n) or self.W.shape != (n_ag, d, n) or self.kappa.shape != (n_ag,):
            raise ValueError("inconsistent quadratic instant dimensions")
        self.const = np.zeros(n_ag) if const is None else np.asarray(const, dtype=float)
        self.lower = np.full((n_ag, n), -np.inf) if lower is None else np.asarray(lower, float)
        self.upper = np.full((n_ag, n), np.inf) if upper is None else np.asarray(upper, float)
        if np.any(self.lower > self.upper):
            raise ValueError("empty box in quadratic instant")
        self.n_agents, self.dim, self.agg_dim = n_ag, n, d
        self.n_constraints = 2 * n
        self._bounds_cache = (self.lower, self.upper)

    def cost(self, x, sig, agents=None):
        i = agent_index(agents, self.n_agents)
        dx = x - self.c[i]
        ds = sig - self.b[i]
        quad = 0.5 * np.einsum("ki,kij,kj->k", dx, self.Q[i], dx)
        return quad + 0.5 * self.kappa[i] * np.sum(ds * ds, axis=1) + self.const[i]

    def grad1(self, x, sig, agents=None):
        i = agent_index(agents, self.n_agents)
        return np.einsum("kij,kj->ki", self.Q[i], x - self.c[i])

    def grad2(self, x, sig, agents=None):
        i = agent_index(agents, self.n_agents)
        return self.kappa[i][:, None] * (sig - self.b[i])

    def phi(self, x, agents=None):
        i = agent_index(agents, self.n_agents)
        return np.einsum("kdn,kn->kd", self.W[i], x)

    def jac_phi(self, x, agents=None):
        i = agent_index(agents, self.n_agents)
        return np.transpose(self.W[i], (0, 2, 1)).copy()

    def constraints(self, x, agents=None):
        i = agent_index(agents, self.n_agents)
        lo, up = self.lower[i], self.upper[i]
        h_lo = np.where(np.isfinite(lo), lo - x, VACUOUS)
        h_up = np.where(np.isfinite(up), x - up, VACUOUS)
        return np.concatenate([h_lo, h_up], axis=1)

    def feasible_set(self, i):
        return Box(self.lower[i], self.upper[i])

    def project(self, x, agents=None):
        i = agent_index(agents, self.n_agents)
        return np.clip(x, self.lower[i], self.upper[i])

    # exact analysis quantities -------------------------------------------------

    def hessian(self):
        """Hessian of the global cost x -> sum_i f_i(x_i, sigma(x))."""
        n_ag, n = self.n_agents, self.dim
        H = np.zeros((n_ag * n, n_ag * n))
        for i in range(n_ag):
            H[i * n:(i + 1) * n, i * n:(i + 1) * n] = self.Q[i]
        Wcat = np.concatenate(list(self.W), axis=1)
        return H + self.kappa.sum() / n_ag**2 * (Wcat.T @ Wcat)

    def tracking_map_jacobian(self):
        """Jacobian of (x, y) -> grad1 f(x, y) + nabla phi(x) 1 mean_i grad2 f_i(x_i, y_i)."""
        n_ag, n, d = self.n_agents, self.dim, self.agg_dim
        jx = np.zeros((n_ag * n, n_ag * n))
        jy = np.zeros((n_ag * n, n_ag * d))
        for i in range(n_ag):
            jx[i * n:(i + 1) * n, i * n:(i + 1) * n] = self.Q[i]
            for j in range(n_ag):
                jy[i * n:(i + 1) * n, j * d:(j + 1) * d] = self.W[i].T * self.kappa[j] / n_ag
        return np.hstack([jx, jy])

    def minimizer_unconstrained(self):
        """Closed-form minimizer when the box is the whole space."""
        H = self.hessian()
        n_ag, n = self.n_agents, self.dim
        rhs = np.concatenate([self.Q[i] @ self.c[i] for i in range(n_ag)])
        Wcat = np.concatenate(list(self.W), axis=1)
        rhs = rhs + Wcat.T @ (self.kappa @ self.b) / n_ag
        return np.linalg.solve(H, rhs).reshape(n_ag, n)


def exact_constants(instants):
    """(mu, L1, L2, L3) valid uniformly over the given quadratic instants.

    L1 is the larger of the Lipschitz constants of the global gradient and
    of the tracking map (x, y) -> grad1 f + nabla phi 1 mean grad2 f; both
    Lipschitz conditions are required of the same L1.
    """
    if isinstance(instants, QuadraticInstant):
        instants = [instants]
    mu = np.inf
    L1 = L2 = L3 = 0.0
    for inst in instants:
        eig = np.linalg.eigvalsh(inst.hessian())
        mu = min(mu, float(eig[0]))
        lip_g = float(np.linalg.norm(inst.tracking_map_jacobian(), 2))
        L1 = max(L1, float(eig[-1]), lip_g)
        L2 = max(L2, float(np.max(inst.kappa)))
        L3 = max(L3, max(float(np.linalg.norm(w, 2)) for w in inst.W))
    return ProblemConstants(mu=mu, L1=L1, L2=L2, L3=L3)


def _box_vertices(lo, up):
    return np.array(list(itertools.product(*zip(lo, up))))


def exact_variations(cur, nxt, region_lower, region_upper):
    """Exact (eta_t, omega_t, gamma_t) between two quadratic instants.

    ``region_lower/upper`` (shape (N, n)) describe the static sets X_i over
    which the suprema are taken. Returns inf where the supremum is unbounded.
    """
    eta = omega = gamma = 0.0
    for i in range(cur.n_agents):
        if cur.kappa[i] != nxt.kappa[i]:
            eta = np.inf
        else:
            eta = max(eta, cur.kappa[i] * float(np.linalg.norm(nxt.b[i] - cur.b[i])))
        dW = nxt.W[i] - cur.W[i]
        if np.any(dW):
            lo, up = region_lower[i], region_upper[i]
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(up))):
                omega = np.inf
            else:
                verts = _box_vertices(lo, up)
                omega = max(omega, float(np.max(np.linalg.norm(verts @ dW.T, axis=1))))
        dh = []
        for a, b_ in ((cur.lower[i], nxt.lower[i]), (cur.upper[i], nxt.upper[i])):
            fa, fb = np.isfinite(a), np.isfinite(b_)
            if np.any(fa != fb):
                gamma = np.inf
                continue
            with np.errstate(invalid="ignore"):
                dh.append(np.where(fa, b_ - a, 0.0))
        if dh:
            gamma = max(gamma, float(np.linalg.norm(np.concatenate(dh))))
    return eta, omega, gamma


def random_quadratic(rng, n_agents=3, dim=2, agg_dim=None, box=False, kappa_max=1.0,
                     w_scale=1.0, q_range=(0.5, 3.0)):
    """Random strongly convex quadratic instant (used by fuzz tests and the CLI)."""
    d = dim if agg_dim is None else agg_dim
    Q = np.empty((n_agents, dim, dim))
    for i in range(n_agents):
        U, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        Q[i] = U @ np.diag(rng.uniform(*q_range, size=dim)) @ U.T
        Q[i] = 0.5 * (Q[i] + Q[i].T)
    c = rng.normal(scale=2.0, size=(n_agents, dim))
    kappa = rng.uniform(0.0, kappa_max, size=n_agents)
    b = rng.normal(size=(n_agents, d))
    W = w_scale * rng.uniform(-1.0, 1.0, size=(n_agents, d, dim))
    lower = upper = None
    if box:
        center = rng.normal(scale=1.0, size=(n_agents, dim))
        half = rng.uniform(0.3, 2.0, size=(n_agents, dim))
        lower, upper = center - half, center + half
    return QuadraticInstant(Q, c, kappa, b, W, lower=lower, upper=upper)


def drifting_quadratic_stream(seed, n_agents=3, dim=2, agg_dim=None, horizon=100, box=False,
                              drift=0.05, vary_weights=None, kappa_max=1.0, w_scale=1.0):
    """Time-varying quadratic stream with exact constants and exact per-round variations.

    Targets c and b move along smooth periodic paths; with ``box`` the boxes
    shift too and (by default) the aggregation matrices W_t breathe. Q and
    kappa stay fixed so the gradient variation eta_t stays finite.
    """
    from .problem import ProblemStream, VariationBounds

    rng = np.random.default_rng(seed)
    base = random_quadratic(rng, n_agents, dim, agg_dim, box=box, kappa_max=kappa_max, w_scale=w_scale)
    vary_weights = box if vary_weights is None else vary_weights
    ph = rng.uniform(0, 2 * np.pi, size=4)
    dc = rng.normal(size=base.c.shape)
    db = rng.normal(size=base.b.shape)
    dbox = rng.normal(size=base.c.shape)

    def factory(t):
        s = np.sin(t / 10 + ph[0])
        lower = upper = None
        if box:
            shift = drift * np.sin(t / 12 + ph[2]) * dbox
            lower, upper = base.lower + shift, base.upper + shift
        w_fac = 1 + drift * np.sin(t / 15 + ph[3]) if vary_weights else 1.0
        return QuadraticInstant(base.Q, base.c + drift * s * dc, base.kappa,
                                base.b + drift * np.cos(t / 8 + ph[1]) * db, w_fac * base.W,
                                lower=lower, upper=upper)

    instants = [factory(t) for t in range(horizon + 1)]
    consts = exact_constants(instants)
    if box:
        region_lo = np.min([i.lower for i in instants], axis=0)
        region_up = np.max([i.upper for i in instants], axis=0)
    else:
        region_lo = np.full(base.c.shape, -np.inf)
        region_up = np.full(base.c.shape, np.inf)
    var = np.array([exact_variations(a, b, region_lo, region_up)
                    for a, b in zip(instants[:-1], instants[1:])])
    bounds = VariationBounds.from_series(var[:, 0], var[:, 1], var[:, 2])
    stream = ProblemStream(lambda t: instants[t], horizon, constants=consts, bounds=bounds,
                           name=f"drifting-quadratic-{seed}", exact_constants=True,
                           cache_size=horizon + 2)
    return stream
