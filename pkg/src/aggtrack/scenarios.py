"""Reproducible generators for the robotic basketball and multi-robot surveillance experiments."""

from __future__ import annotations

import dataclasses
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AggTrackError, InvalidConfig
from .graph import erdos_renyi
from .metrics import attach_oracle, average_regret, summarize_trials
from .oracle import solve_instant, solve_stream
from .pat import AlgorithmParams, simulate
from .problem import ProblemConstants, ProblemInstant, ProblemStream, VariationBounds
from .projection import Box
from .quadratic import QuadraticInstant

log = logging.getLogger(__name__)


def _waypoint_path(rng, start, n_segments, seg_len, step_fn):
    """Piecewise-linear trajectory: waypoints every ``seg_len`` rounds.

    ``step_fn(rng, point)`` draws the next waypoint. Returns a function of t.
    """
    pts = [np.asarray(start, dtype=float)]
    for _ in range(n_segments):
        pts.append(step_fn(rng, pts[-1]))
    pts = np.array(pts)

    def at(t):
        t = np.asarray(t, dtype=float)
        k = np.minimum((t // seg_len).astype(int), n_segments - 1)
        frac = (t - k * seg_len) / seg_len
        return pts[k] + frac[..., None] * (pts[k + 1] - pts[k])

    return at, pts


# surveillance -----------------------------------------------------------------


@dataclass
class SurveillanceConfig:
    n_agents: int = 50
    radius: float = 1.0
    gamma1: float = 1.0
    gamma2: float = 10.0
    beta_max: float = 1.0
    beta_rule: str = "inverse"  # "inverse": 1/||p-b||^2, "literal": ||p-b||^2
    time_varying_beta: bool = True
    center_low: float = 2.0
    center_high: float = 18.0
    target_low: float = 6.0
    target_high: float = 14.0
    target_phase: float = 1.5707963267948966
    box_lower0: tuple = (0.0, 0.0)
    box_upper0: tuple = (20.0, 20.0)
    box_segment: int = 200
    box_step: float = 2.0
    min_box_width: float = 10.0
    box_walk: str = "anchored"  # "anchored": waypoints jitter around the initial box, "random_walk"
    alpha: float = 1.0
    delta: float = 0.5
    horizon: int = 2000
    trials: int = 100
    edge_prob: float = 0.2
    graph_seed: int = 0
    init: str = "auto"  # "local": projected local minimizers, "random": uniform in the box

    def validate(self):
        if self.n_agents < 1 or self.horizon < 1 or self.trials < 1:
            raise InvalidConfig("n_agents, horizon and trials must be positive")
        if min(self.gamma1, self.gamma2, self.beta_max, self.radius) <= 0:
            raise InvalidConfig("gamma1, gamma2, beta_max and radius must be positive")
        if self.beta_rule not in ("inverse", "literal"):
            raise InvalidConfig(f"unknown beta_rule {self.beta_rule!r}")
        if self.box_walk not in ("anchored", "random_walk"):
            raise InvalidConfig(f"unknown box_walk {self.box_walk!r}")
        if self.init not in ("auto", "local", "random"):
            raise InvalidConfig(f"unknown init {self.init!r}")
        if np.any(np.asarray(self.box_lower0) > np.asarray(self.box_upper0)):
            raise InvalidConfig("initial box is empty")
        if not 0 < self.delta < 1 or self.alpha <= 0:
            raise InvalidConfig("need alpha > 0 and 0 < delta < 1")
        return self


def surveillance_weights(p, b, cfg):
    dist2 = np.sum((p - b) ** 2, axis=-1)
    if not cfg.time_varying_beta:
        return np.ones_like(dist2)
    if cfg.beta_rule == "literal":
        return np.minimum(dist2, cfg.beta_max)
    with np.errstate(divide="ignore"):
        return np.minimum(1.0 / dist2, cfg.beta_max)


class SurveillanceStream(ProblemStream):
    """Drifting-box surveillance problem; a QuadraticInstant per round.

    ``mode="static"`` freezes intruders, target and box at round ``t0``.
    """

    def __init__(self, cfg, seed, mode="online", t0=0):
        cfg.validate()
        if mode not in ("online", "static"):
            raise InvalidConfig(f"unknown mode {mode!r}")
        self.cfg, self.seed, self.mode, self.t0 = cfg, seed, mode, t0
        rng = np.random.default_rng(seed)
        n = cfg.n_agents
        self.p_center = rng.uniform(cfg.center_low, cfg.center_high, size=(n, 2))
        self.b_center = rng.uniform(cfg.target_low, cfg.target_high, size=2)
        n_seg = cfg.horizon // cfg.box_segment + 2
        lo0 = np.asarray(cfg.box_lower0, float)
        up0 = np.asarray(cfg.box_upper0, float)

        anchor = np.concatenate([lo0, up0])

        def draw(r, pt):
            base = anchor if cfg.box_walk == "anchored" else pt
            lo, up = base[:2], base[2:]
            for _ in range(100):
                nlo = lo + r.uniform(-cfg.box_step, cfg.box_step, 2)
                nup = up + r.uniform(-cfg.box_step, cfg.box_step, 2)
                if np.all(nup - nlo >= cfg.min_box_width):
                    return np.concatenate([nlo, nup])
            return pt.copy()

        self._box_at, self._box_pts = _waypoint_path(rng, np.concatenate([lo0, up0]), n_seg,
                                                     cfg.box_segment, draw)
        super().__init__(self._build, cfg.horizon, name=f"surveillance-{mode}",
                         cache_size=cfg.horizon + 2)
        self._static = mode == "static"
        self.constants = surveillance_constants(self)
        self.exact_constants = True
        self.bounds = surveillance_variations(self)

    def _time(self, t):
        return self.t0 if self.mode == "static" else t

    def intruders(self, t):
        t = self._time(t)
        r = self.cfg.radius
        return self.p_center + r * np.array([np.cos(t / 100), np.sin(t / 100)])

    def target(self, t):
        t = self._time(t)
        ang = t / 100 + self.cfg.target_phase
        return self.b_center + self.cfg.radius * np.array([np.cos(ang), np.sin(ang)])

    def box(self, t):
        v = self._box_at(np.array(self._time(t)))
        return v[:2], v[2:]

    def beta(self, t):
        return surveillance_weights(self.intruders(t), self.target(t), self.cfg)

    def _build(self, t):
        cfg = self.cfg
        n = cfg.n_agents
        p, b = self.intruders(t), self.target(t)
        beta = self.beta(t)
        g1 = cfg.gamma1
        c = (p + g1 * b) / (1 + g1)
        const = 0.5 * np.sum(p**2, 1) + 0.5 * g1 * np.sum(b**2) - 0.5 * (1 + g1) * np.sum(c**2, 1)
        lo, up = self.box(t)
        return QuadraticInstant(
            Q=np.broadcast_to((1 + g1) * np.eye(2), (n, 2, 2)),
            c=c, kappa=np.full(n, cfg.gamma2 / n), b=np.broadcast_to(b, (n, 2)),
            W=beta[:, None, None] * np.eye(2)[None], const=const,
            lower=np.broadcast_to(lo, (n, 2)), upper=np.broadcast_to(up, (n, 2)),
        )

    def region(self):
        """Bounding box of every X_t over the horizon (the static set X_i)."""
        ts = np.arange(self.horizon + 1)
        v = self._box_at(ts) if self.mode == "online" else self._box_at(np.array([self.t0]))
        return v[:, :2].min(0), v[:, 2:].max(0)

    def initial_point(self, rng=None):
        lo, up = self.box(0)
        n = self.cfg.n_agents
        init = self.cfg.init
        if init == "auto":
            init = "random" if self.mode == "static" else "local"
        if init == "random":
            rng = np.random.default_rng(self.seed + 7_919) if rng is None else rng
            return lo + rng.random((n, 2)) * (up - lo)
        return self.instant_at(0).project(self.instant_at(0).c)

    def positions(self, t):
        """Intruder and target coordinates for export."""
        return {"intruders": self.intruders(t), "target": self.target(t)}


def surveillance_constants(stream):
    """Exact (mu, L1, L2, L3) over the horizon, in closed form.

    With W_i = beta_i I the aggregate part of the Hessian has the single
    nonzero eigenvalue gamma2 ||beta||^2 / N^2.
    """
    cfg = stream.cfg
    n = cfg.n_agents
    ts = np.arange(stream.horizon + 1) if stream.mode == "online" else np.array([stream.t0])
    p = stream.p_center[None] + cfg.radius * np.stack([np.cos(ts / 100), np.sin(ts / 100)], 1)[:, None]
    ang = ts / 100 + cfg.target_phase
    b = stream.b_center[None] + cfg.radius * np.stack([np.cos(ang), np.sin(ang)], 1)
    betas = surveillance_weights(p, b[:, None], cfg)
    nb2 = float(np.max(np.sum(betas**2, axis=1)))
    kappa = cfg.gamma2 / n
    q = 1 + cfg.gamma1
    lam_max = q + cfg.gamma2 * nb2 / n**2
    lip_map = float(np.sqrt(q**2 + kappa**2 * nb2 / n))
    return ProblemConstants(mu=q, L1=max(lam_max, lip_map), L2=kappa, L3=float(np.max(betas)))


def surveillance_variations(stream, zeta_t=None):
    """Exact eta_t, omega_t, gamma_t (and optionally a measured zeta_t series)."""
    cfg = stream.cfg
    T = stream.horizon
    if stream.mode == "static":
        z = np.zeros(T)
        return VariationBounds.from_series(z, z, z, zeta_t if zeta_t is not None else z)
    ts = np.arange(T + 1)
    b = np.array([stream.target(t) for t in ts])
    betas = np.array([stream.beta(t) for t in ts])
    box = stream._box_at(ts)
    eta_t = cfg.gamma2 / cfg.n_agents * np.linalg.norm(np.diff(b, axis=0), axis=1)
    lo, up = stream.region()
    corners = np.array([[lo[0], lo[1]], [lo[0], up[1]], [up[0], lo[1]], [up[0], up[1]]])
    rmax = float(np.max(np.linalg.norm(corners, axis=1)))
    omega_t = np.max(np.abs(np.diff(betas, axis=0)), axis=1) * rmax
    gamma_t = np.linalg.norm(np.diff(box, axis=0), axis=1)
    return VariationBounds.from_series(eta_t, omega_t, gamma_t, zeta_t)


def surveillance_stream(cfg, rng_seed, mode="online"):
    return SurveillanceStream(cfg, rng_seed, mode)


def surveillance_network(cfg):
    return erdos_renyi(cfg.n_agents, cfg.edge_prob, seed=cfg.graph_seed)


# basketball -------------------------------------------------------------------


@dataclass
class BasketballConfig:
    n_players: int = 5
    field_size: tuple = (28.0, 15.0)
    basket: tuple = (26.425, 7.5)
    beta_max: float = 1.0
    eps_h: float = 0.5
    gamma: float = 5.0
    smoothing: float = 1e-3
    alpha: float = 0.1
    delta: float = 0.1
    horizon: int = 1000
    segment: int = 200
    pass_every: int = 150
    pass_duration: int = 20
    start_h: tuple = (8.0, 14.0)
    max_h: float = 24.0
    speed_margin: float = 0.95
    edge_prob: float = 1.0
    graph_seed: int = 0

    def validate(self):
        if self.n_players < 1 or self.horizon < 1:
            raise InvalidConfig("n_players and horizon must be positive")
        if self.eps_h <= 0 or self.smoothing <= 0 or self.gamma <= 0 or self.beta_max <= 0:
            raise InvalidConfig("eps_h, smoothing, gamma and beta_max must be positive")
        if not 0 < self.speed_margin <= 1:
            raise InvalidConfig("speed_margin must lie in (0, 1]")
        if self.max_h + self.eps_h > self.field_size[0]:
            raise InvalidConfig("offenders may leave no room ahead of them on the field")
        if not 0 < self.delta < 1 or self.alpha <= 0:
            raise InvalidConfig("need alpha > 0 and 0 < delta < 1")
        return self


def huber_norm(v, r):
    n = np.linalg.norm(v, axis=-1)
    return np.where(n >= r, n, n**2 / (2 * r) + r / 2)


def huber_grad(v, r):
    n = np.linalg.norm(v, axis=-1)
    return v / np.maximum(n, r)[..., None]


class BasketballInstant(ProblemInstant):
    """f_i = H(x_i - p_i) + (gamma/N) H(sig - b), phi_i = beta_i x_i, H the smoothed norm.

    h_i stacks the restricted horizontal constraint and the two vertical
    bounds; the feasible set is the field box intersected with them, which
    is again an axis-aligned box.
    """

    def __init__(self, p, ball, beta, cfg):
        self.p, self.ball, self.beta, self.cfg = p, ball, beta, cfg
        n = len(p)
        self.n_agents, self.dim, self.agg_dim, self.n_constraints = n, 2, 2, 3
        hB, vB = cfg.basket
        W, Hf = cfg.field_size
        v_lo = np.where(p[:, 1] <= vB, p[:, 1], vB)
        v_hi = np.where(p[:, 1] <= vB, vB, p[:, 1])
        self.v_lo, self.v_hi = v_lo, v_hi
        h_lo = np.maximum(p[:, 0] + cfg.eps_h, 0.0)
        self.lower = np.column_stack([h_lo, np.maximum(v_lo, 0.0)])
        self.upper = np.column_stack([np.full(n, W), np.minimum(v_hi, Hf)])
        self._bounds_cache = (self.lower, self.upper)

    def cost(self, x, sig, agents=None):
        i = self._idx(agents)
        r = self.cfg.smoothing
        return huber_norm(x - self.p[i], r) + self.cfg.gamma / self.n_agents * huber_norm(sig - self.ball, r)

    def grad1(self, x, sig, agents=None):
        return huber_grad(x - self.p[self._idx(agents)], self.cfg.smoothing)

    def grad2(self, x, sig, agents=None):
        return self.cfg.gamma / self.n_agents * huber_grad(sig - self.ball, self.cfg.smoothing)

    def phi(self, x, agents=None):
        return self.beta[self._idx(agents)][:, None] * x

    def jac_phi(self, x, agents=None):
        return self.beta[self._idx(agents)][:, None, None] * np.eye(2)[None]

    def constraints(self, x, agents=None):
        i = self._idx(agents)
        return np.column_stack([
            self.p[i, 0] + self.cfg.eps_h - x[:, 0],
            self.v_lo[i] - x[:, 1],
            x[:, 1] - self.v_hi[i],
        ])

    def feasible_set(self, i):
        return Box(self.lower[i], self.upper[i])

    def project(self, x, agents=None):
        i = self._idx(agents)
        return np.clip(x, self.lower[i], self.upper[i])

    def _idx(self, agents):
        return np.arange(self.n_agents) if agents is None else np.atleast_1d(np.asarray(agents, int))


class BasketballStream(ProblemStream):
    def __init__(self, cfg, seed):
        cfg.validate()
        self.cfg, self.seed = cfg, seed
        rng = np.random.default_rng(seed)
        n = cfg.n_players
        W, Hf = cfg.field_size
        max_dh = cfg.eps_h * cfg.delta * cfg.segment * cfg.speed_margin
        n_seg = cfg.horizon // cfg.segment + 2
        self._paths = []
        for _ in range(n):
            start = np.array([rng.uniform(*cfg.start_h), rng.uniform(1.0, Hf - 1.0)])

            def draw(r, pt):
                h = np.clip(pt[0] + r.uniform(-max_dh, max_dh), 1.0, cfg.max_h)
                v = np.clip(pt[1] + r.uniform(-4.0, 4.0), 0.5, Hf - 0.5)
                return np.array([h, v])

            self._paths.append(_waypoint_path(rng, start, n_seg, cfg.segment, draw)[0])
        n_pass = cfg.horizon // cfg.pass_every + 2
        holders = [int(rng.integers(n))]
        for _ in range(n_pass):
            others = [j for j in range(n) if j != holders[-1]] or [holders[-1]]
            holders.append(int(rng.choice(others)))
        self.holders = holders
        super().__init__(self._build, cfg.horizon, name="basketball")

    def offenders(self, t):
        return np.array([f(np.array(t)) for f in self._paths])

    def ball(self, t):
        cfg = self.cfg
        k = t // cfg.pass_every
        p = self.offenders(t)
        s = min(1.0, (t - k * cfg.pass_every) / cfg.pass_duration)
        if k == 0:
            return p[self.holders[0]].copy()
        return (1 - s) * p[self.holders[k - 1]] + s * p[self.holders[k]]

    def beta(self, t):
        p = self.offenders(t)
        d2 = np.sum((p - np.asarray(self.cfg.basket)) ** 2, axis=1)
        with np.errstate(divide="ignore"):
            return np.minimum(1.0 / d2, self.cfg.beta_max)

    def _build(self, t):
        return BasketballInstant(self.offenders(t), self.ball(t), self.beta(t), self.cfg)

    def initial_point(self):
        inst = self.instant_at(0)
        return inst.project(inst.p + np.array([self.cfg.eps_h, 0.0]))

    def positions(self, t):
        return {"offenders": self.offenders(t), "ball": self.ball(t)}


def basketball_stream(cfg, rng_seed):
    return BasketballStream(cfg, rng_seed)


def basketball_network(cfg):
    return erdos_renyi(cfg.n_players, cfg.edge_prob, seed=cfg.graph_seed)


# Monte Carlo ------------------------------------------------------------------


@dataclass
class MonteCarloResult:
    mode: str
    mean: np.ndarray
    std: np.ndarray
    series: list
    seeds: list
    failures: list = field(default_factory=list)
    extras: list = field(default_factory=list)


def run_surveillance_trial(cfg, seed, mode, network=None, oracle_tol=None, keep_run=False):
    """One trial; returns (series, extras). Online: R_T/T; static: relative error."""
    stream = SurveillanceStream(cfg, seed, mode)
    net = surveillance_network(cfg) if network is None else network
    params = AlgorithmParams(cfg.alpha, cfg.delta, seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        run = simulate(net, stream, params, stream.initial_point(), T=cfg.horizon)
    L = stream.constants.L1
    if mode == "static":
        tol = 1e-12 if oracle_tol is None else oracle_tol
        sol = solve_instant(stream.instant_at(0), run.traces[-1].x, tol=tol, lipschitz=L)
        xs = sol.x_star
        series = np.array([np.linalg.norm(tr.x - xs) for tr in run.traces]) / np.linalg.norm(xs)
        extras = {"x_star": xs, "residual": sol.residual}
    else:
        tol = 1e-9 if oracle_tol is None else oracle_tol
        ss = solve_stream(stream, tol=tol, rounds=range(cfg.horizon + 1), lipschitz=L)
        attach_oracle(run.traces, ss.solutions)
        series = average_regret(run.traces)
        extras = {"zeta": ss.zeta, "zeta_t": ss.zeta_t}
    extras["violations"] = list(run.violations)
    if keep_run:
        extras["run"] = run
        extras["stream"] = stream
    return series, extras


def worker_count():
    """Thread cap from AGGTRACK_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("AGGTRACK_THREADS", "1")))
    except ValueError:
        raise InvalidConfig("AGGTRACK_THREADS must be an integer") from None


def monte_carlo(cfg, trials=None, base_seed=0, mode="online", oracle_tol=None, keep_runs=False,
                workers=None):
    """Monte Carlo over seeds base_seed + k; failed trials are reported, not fatal.

    Trials may run on worker threads; results are collected in seed order so
    the summary does not depend on scheduling.
    """
    trials = cfg.trials if trials is None else trials
    if trials < 1:
        raise InvalidConfig("trials must be >= 1")
    net = surveillance_network(cfg)
    workers = worker_count() if workers is None else workers

    def one(k):
        seed = base_seed + k
        try:
            return seed, run_surveillance_trial(cfg, seed, mode, net, oracle_tol, keep_run=keep_runs), None
        except AggTrackError as exc:
            log.warning("trial %d (seed %d) failed: %s", k, seed, exc)
            return seed, None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(trials)))
    else:
        results = [one(k) for k in range(trials)]
    series, seeds, failures, extras = [], [], [], []
    for seed, out, err in results:
        if err is not None:
            failures.append((seed, err))
            continue
        series.append(out[0])
        seeds.append(seed)
        extras.append(out[1])
    if not series:
        raise AggTrackError(f"all {trials} trials failed")
    mean, std = summarize_trials(series)
    return MonteCarloResult(mode, mean, std, series, seeds, failures, extras)


def config_from_dict(cls, data):
    """Build a config dataclass from a dict, rejecting unknown keys."""
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise InvalidConfig(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs).validate()
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from exc
