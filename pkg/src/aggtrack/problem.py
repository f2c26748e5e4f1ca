"""Time-varying aggregative problems: instants, streams, constants and variations.

Every :class:`ProblemInstant` exposes its oracles in stacked form. Arrays
carry one row per agent: ``x`` is ``(k, n)``, aggregate arguments are
``(k, d)``, and ``agents`` selects which agents the rows belong to (all of
them when omitted). Per-agent evaluation is the ``k = 1`` case, which is
what the message-passing engine uses.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptySample, InvalidConstants
from .projection import Box, ConvexSet, WholeSpace, axis_aligned_box, project


def agent_index(agents, n_agents):
    if agents is None:
        return np.arange(n_agents)
    return np.atleast_1d(np.asarray(agents, dtype=int))


class ProblemInstant(ABC):
    """Snapshot of the problem at one round.

    Subclasses set ``n_agents``, ``dim`` (n_i, common to all agents),
    ``agg_dim`` (d) and ``n_constraints`` (S) and implement the oracles.
    """

    n_agents: int
    dim: int
    agg_dim: int
    n_constraints: int

    @abstractmethod
    def cost(self, x, sig, agents=None):
        """Local costs f_i(x_i, sig_i), shape (k,)."""

    @abstractmethod
    def grad1(self, x, sig, agents=None):
        """Gradients w.r.t. the local variable, shape (k, n)."""

    @abstractmethod
    def grad2(self, x, sig, agents=None):
        """Gradients w.r.t. the aggregate argument, shape (k, d)."""

    @abstractmethod
    def phi(self, x, agents=None):
        """Aggregation contributions phi_i(x_i), shape (k, d)."""

    @abstractmethod
    def jac_phi(self, x, agents=None):
        """Jacobians nabla phi_i as n x d matrices, shape (k, n, d)."""

    @abstractmethod
    def feasible_set(self, i) -> ConvexSet:
        """X_{i,t}: the set agent i projects onto."""

    def constraints(self, x, agents=None):
        """Functional constraints h_i(x_i), shape (k, S). Empty by default."""
        return np.zeros((np.asarray(x).shape[0], 0))

    def box_bounds(self):
        """(lower, upper) arrays of shape (N, n) when every X_i is a box, else None."""
        boxes = [axis_aligned_box(self.feasible_set(i)) for i in range(self.n_agents)]
        if any(b is None for b in boxes):
            return None
        return np.array([b.lower for b in boxes]), np.array([b.upper for b in boxes])

    def project(self, x, agents=None):
        idx = agent_index(agents, self.n_agents)
        x = np.asarray(x, dtype=float)
        bounds = self._cached_bounds()
        if bounds is not None:
            return np.clip(x, bounds[0][idx], bounds[1][idx])
        return np.array([project(self.feasible_set(i), xi) for i, xi in zip(idx, x)])

    def _cached_bounds(self):
        if not hasattr(self, "_bounds_cache"):
            self._bounds_cache = self.box_bounds()
        return self._bounds_cache


@dataclass
class AgentProblem:
    """Per-agent oracles for a custom problem (one agent, one round).

    ``cost(x_i, sig)``, ``grad1``, ``grad2`` take a local vector and an
    aggregate vector; ``phi(x_i)`` returns a d-vector and ``jac_phi(x_i)``
    an (n, d) matrix.
    """

    cost: Callable
    grad1: Callable
    grad2: Callable
    phi: Callable
    jac_phi: Callable
    feasible: ConvexSet = field(default_factory=WholeSpace)
    constraints: Callable | None = None


class CallableInstant(ProblemInstant):
    """ProblemInstant assembled from per-agent callables (loops over agents)."""

    def __init__(self, agents: Sequence[AgentProblem], dim, agg_dim, n_constraints=0):
        self.agents = list(agents)
        self.n_agents = len(self.agents)
        self.dim = dim
        self.agg_dim = agg_dim
        self.n_constraints = n_constraints

    def _map(self, name, x, sig, agents, shape):
        idx = agent_index(agents, self.n_agents)
        out = np.empty((len(idx),) + shape)
        for k, i in enumerate(idx):
            fn = getattr(self.agents[i], name)
            out[k] = fn(x[k]) if sig is None else fn(x[k], sig[k])
        return out

    def cost(self, x, sig, agents=None):
        return self._map("cost", x, sig, agents, ())

    def grad1(self, x, sig, agents=None):
        return self._map("grad1", x, sig, agents, (self.dim,))

    def grad2(self, x, sig, agents=None):
        return self._map("grad2", x, sig, agents, (self.agg_dim,))

    def phi(self, x, agents=None):
        return self._map("phi", x, None, agents, (self.agg_dim,))

    def jac_phi(self, x, agents=None):
        return self._map("jac_phi", x, None, agents, (self.dim, self.agg_dim))

    def constraints(self, x, agents=None):
        if self.n_constraints == 0:
            return np.zeros((np.asarray(x).shape[0], 0))
        return self._map("constraints", x, None, agents, (self.n_constraints,))

    def feasible_set(self, i):
        return self.agents[i].feasible


class ProblemStream:
    """Deterministic sequence of instants: ``instant_at(t)`` is a pure function of t.

    ``factory`` builds the instant for a round; results are memoized in a
    small LRU cache since the algorithm touches rounds t and t+1 and the
    oracle revisits them.
    """

    def __init__(self, factory, horizon, constants=None, bounds=None, name="stream",
                 exact_constants=False, cache_size=8):
        if horizon < 1:
            raise ValueError("horizon must be a positive integer")
        self._factory = factory
        self.horizon = int(horizon)
        self.constants = constants
        self.bounds = bounds
        self.name = name
        self.exact_constants = exact_constants
        self._cache = OrderedDict()
        self._cache_size = cache_size

    def instant_at(self, t) -> ProblemInstant:
        t = int(t)
        if t in self._cache:
            self._cache.move_to_end(t)
            return self._cache[t]
        inst = self._factory(t)
        self._cache[t] = inst
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return inst

    @property
    def n_agents(self):
        return self.instant_at(0).n_agents

    @property
    def static(self):
        return getattr(self, "_static", False)


def static_stream(instant, horizon, **kwargs):
    stream = ProblemStream(lambda t: instant, horizon, **kwargs)
    stream._static = True
    return stream


@dataclass(frozen=True)
class ProblemConstants:
    mu: float
    L1: float
    L2: float
    L3: float

    def __post_init__(self):
        if not self.mu > 0:
            raise InvalidConstants(f"strong convexity mu must be > 0, got {self.mu}")
        for name in ("L1", "L2", "L3"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise InvalidConstants(f"{name} must be finite and >= 0, got {v}")
        if self.L1 <= 0:
            raise InvalidConstants("L1 must be > 0")
        if self.mu > self.L1 * (1 + 1e-12):
            raise InvalidConstants(f"mu={self.mu} exceeds L1={self.L1}")

    @property
    def max_alpha(self):
        return 1.0 / self.L1

    def to_dict(self):
        return {"mu": self.mu, "L1": self.L1, "L2": self.L2, "L3": self.L3}


@dataclass
class VariationBounds:
    """Uniform variation bounds plus optional per-round measured series.

    Per-round series are indexed by t and describe the change from round t
    to t+1.
    """

    eta: float = 0.0
    omega: float = 0.0
    gamma: float = 0.0
    zeta: float = 0.0
    eta_t: np.ndarray | None = None
    omega_t: np.ndarray | None = None
    gamma_t: np.ndarray | None = None
    zeta_t: np.ndarray | None = None

    def __post_init__(self):
        for name in ("eta", "omega", "gamma", "zeta"):
            if getattr(self, name) < 0:
                raise InvalidConstants(f"{name} must be >= 0")

    def at(self, name, t):
        """Per-round value when measured, otherwise the uniform bound."""
        series = getattr(self, name + "_t")
        if series is not None and t < len(series):
            return float(series[t])
        return float(getattr(self, name))

    def consistent(self, rtol=1e-9):
        """True when every measured value is within its declared bound."""
        for name in ("eta", "omega", "gamma", "zeta"):
            series = getattr(self, name + "_t")
            if series is not None and len(series):
                if np.max(series) > getattr(self, name) * (1 + rtol) + 1e-15:
                    return False
        return True

    @classmethod
    def from_series(cls, eta_t=None, omega_t=None, gamma_t=None, zeta_t=None):
        def mx(s):
            return float(np.max(s)) if s is not None and len(s) else 0.0

        return cls(mx(eta_t), mx(omega_t), mx(gamma_t), mx(zeta_t),
                   eta_t=None if eta_t is None else np.asarray(eta_t, float),
                   omega_t=None if omega_t is None else np.asarray(omega_t, float),
                   gamma_t=None if gamma_t is None else np.asarray(gamma_t, float),
                   zeta_t=None if zeta_t is None else np.asarray(zeta_t, float))

    def to_dict(self):
        return {"eta": self.eta, "omega": self.omega, "gamma": self.gamma, "zeta": self.zeta}


def _as_blocks(instant, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.size != instant.n_agents * instant.dim:
            raise DimensionMismatch(
                f"stacked vector of size {x.size} does not split into "
                f"{instant.n_agents} blocks of {instant.dim}"
            )
        x = x.reshape(instant.n_agents, instant.dim)
    if x.shape != (instant.n_agents, instant.dim):
        raise DimensionMismatch(f"x has shape {x.shape}, expected {(instant.n_agents, instant.dim)}")
    return x


def aggregate(instant, x):
    """sigma_t(x) = mean of phi_i(x_i)."""
    x = _as_blocks(instant, x)
    return instant.phi(x).mean(axis=0)


def global_cost(instant, x):
    x = _as_blocks(instant, x)
    sig = aggregate(instant, x)
    return float(instant.cost(x, np.broadcast_to(sig, (instant.n_agents, sig.size))).sum())


def global_grad(instant, x):
    """Gradient of x -> sum_i f_i(x_i, sigma(x)), returned as (N, n) blocks."""
    x = _as_blocks(instant, x)
    sig = aggregate(instant, x)
    sig_rep = np.broadcast_to(sig, (instant.n_agents, sig.size))
    g2_mean = instant.grad2(x, sig_rep).mean(axis=0)
    return instant.grad1(x, sig_rep) + instant.jac_phi(x) @ g2_mean


def check_gradients(instant, x, sig=None, h=1e-6, rtol=1e-5):
    """Compare analytic oracles with central finite differences.

    Returns a dict of relative errors for grad1, grad2, jac_phi and the
    global gradient; ``ok`` is True when all are below ``rtol``.
    """
    x = _as_blocks(instant, x)
    n_ag, n, d = instant.n_agents, instant.dim, instant.agg_dim
    if sig is None:
        sig = np.broadcast_to(aggregate(instant, x), (n_ag, d)).copy()

    def rel(a, b):
        return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8))

    fd1 = np.zeros((n_ag, n))
    fdj = np.zeros((n_ag, n, d))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        fd1[:, k] = (instant.cost(x + e, sig) - instant.cost(x - e, sig)) / (2 * h)
        fdj[:, k, :] = (instant.phi(x + e) - instant.phi(x - e)) / (2 * h)
    fd2 = np.zeros((n_ag, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        fd2[:, k] = (instant.cost(x, sig + e) - instant.cost(x, sig - e)) / (2 * h)
    flat = x.reshape(-1)
    fdg = np.zeros(flat.size)
    for k in range(flat.size):
        e = np.zeros(flat.size)
        e[k] = h
        fdg[k] = (global_cost(instant, flat + e) - global_cost(instant, flat - e)) / (2 * h)
    report = {
        "grad1": rel(instant.grad1(x, sig), fd1),
        "grad2": rel(instant.grad2(x, sig), fd2),
        "jac_phi": rel(instant.jac_phi(x), fdj),
        "global_grad": rel(global_grad(instant, x).reshape(-1), fdg),
    }
    report["ok"] = all(v <= rtol for v in report.values())
    return report


def measure_variations(stream, t, samples, agg_samples=None):
    """Sampled (eta_t, omega_t, gamma_t) between rounds t and t+1.

    ``samples`` has one array of points per agent, shape (m, n), assumed to
    lie in X_i. Values are maxima over the samples, hence lower bounds on
    the suprema in the bounded-variation assumption. ``agg_samples`` (shape
    (q, d)) are the aggregate arguments z; by default the aggregation values
    phi_t of all sampled points are used.
    """
    if samples is None or len(samples) == 0 or any(len(s) == 0 for s in samples):
        raise EmptySample("every agent needs at least one sample point")
    cur = stream.instant_at(t)
    nxt = stream.instant_at(t + 1)
    n_ag = cur.n_agents
    if len(samples) != n_ag:
        raise DimensionMismatch(f"{len(samples)} sample sets for {n_ag} agents")
    if agg_samples is None:
        agg_samples = np.concatenate(
            [cur.phi(np.asarray(s, float), agents=np.full(len(s), i)) for i, s in enumerate(samples)]
        )
    agg_samples = np.atleast_2d(np.asarray(agg_samples, dtype=float))
    eta = omega = gamma = 0.0
    for i, pts in enumerate(samples):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ids = np.full(len(pts), i)
        omega = max(omega, float(np.max(np.linalg.norm(nxt.phi(pts, ids) - cur.phi(pts, ids), axis=1))))
        if cur.n_constraints:
            dh = nxt.constraints(pts, ids) - cur.constraints(pts, ids)
            gamma = max(gamma, float(np.max(np.linalg.norm(dh, axis=1))))
        xs = np.repeat(pts, len(agg_samples), axis=0)
        zs = np.tile(agg_samples, (len(pts), 1))
        ids2 = np.full(len(xs), i)
        d2 = nxt.grad2(xs, zs, ids2) - cur.grad2(xs, zs, ids2)
        eta = max(eta, float(np.max(np.linalg.norm(d2, axis=1))))
    return eta, omega, gamma


def box_samples(lower, upper, per_agent=16, seed=0):
    """Random sample points inside per-agent boxes (corners included)."""
    rng = np.random.default_rng(seed)
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    out = []
    n = lower.shape[1]
    corners = np.array(np.meshgrid(*[[0.0, 1.0]] * n)).reshape(n, -1).T
    for lo, up in zip(lower, upper):
        u = np.vstack([corners, rng.random((per_agent, n))])
        out.append(lo + u * (up - lo))
    return out


def feasible_boxes(instant):
    bounds = instant.box_bounds()
    if bounds is None:
        return None
    return [Box(lo, up) for lo, up in zip(*bounds)]
