"""Projected Aggregative Tracking and its synchronous round simulator.

Each agent keeps (x_i, s_i, y_i). One round:

    x~_i  = P_{X_i,t}[x_i - alpha (grad1 f_i,t(x_i, s_i) + nabla phi_i,t(x_i) y_i)]
    x_i+  = x_i + delta (x~_i - x_i)
    s_i+  = sum_j a_ij s_j + phi_i,t+1(x_i+) - phi_i,t(x_i)
    y_i+  = sum_j a_ij y_j + grad2 f_i,t+1(x_i+, s_i+) - grad2 f_i,t(x_i, s_i)

Two engines execute the same round. ``vectorized`` stacks all agents into
arrays; ``agents`` runs every agent separately and exchanges s and y through
a :class:`MessageBuffer`, which can log reads to audit information locality.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleStart, InvariantViolation, OracleFailure
from .metrics import RoundTrace, consensus_error, positive_part

FEASIBILITY_TOL = 1e-9
TRACKING_BASE_TOL = 1e-9
TRACKING_DRIFT_TOL = 1e-12


def tracking_tolerance(t, base=TRACKING_BASE_TOL, drift=TRACKING_DRIFT_TOL):
    return base + drift * t


def rel_err(a, b):
    """||a - b|| / max(1, ||b||)."""
    return float(np.linalg.norm(a - b) / max(1.0, float(np.linalg.norm(b))))


@dataclass(frozen=True)
class AlgorithmParams:
    alpha: float
    delta: float
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass
class AgentState:
    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    t: int = 0


class MessageBuffer:
    """Synchronous mailbox for the trackers s_j and y_j.

    Agents ``publish`` their round-t trackers, then each agent ``gather``s
    the weighted neighbour sums. Publishing is closed until ``commit`` so a
    round always reads round-t values regardless of the update order.
    With ``record=True`` every read is logged as (round, reader, owner, name).
    """

    def __init__(self, network, record=False):
        self.network = network
        self.record = record
        self.log = []
        self._slots = {}
        self._round = None

    def publish(self, t, i, **values):
        if self._round is not None and self._round != t:
            raise RuntimeError("publish for a new round before commit")
        self._round = t
        self._slots[i] = values

    def gather(self, t, i, name):
        w = self.network.weights
        total = None
        for j in (i, *self.network.neighbors(i)):
            v = self._slots[j][name]
            if self.record:
                self.log.append((t, i, j, name))
            total = w[i, j] * v if total is None else total + w[i, j] * v
        return total

    def commit(self):
        self._slots = {}
        self._round = None


@dataclass
class SimulationRun:
    network: object
    stream: object
    params: AlgorithmParams
    states: list
    traces: list = field(default_factory=list)
    engine: str = "vectorized"
    strict: bool = False
    buffer: MessageBuffer | None = None
    tracking_base_tol: float = TRACKING_BASE_TOL
    tracking_drift_tol: float = TRACKING_DRIFT_TOL
    violations: list = field(default_factory=list)
    _phi: np.ndarray | None = None
    _g2: np.ndarray | None = None

    @property
    def t(self):
        return self.states[0].t

    def stacked(self):
        x = np.array([st.x for st in self.states])
        s = np.array([st.s for st in self.states])
        y = np.array([st.y for st in self.states])
        return x, s, y


def _call(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:
        raise OracleFailure(f"problem oracle {getattr(fn, '__name__', fn)!r} failed: {exc}") from exc


def _round_trace(run, inst, t, x, s, y, phi, g2, x_tilde=None, step_norm=None, xt_res=0.0):
    n_ag = x.shape[0]
    sigma = phi.mean(axis=0)
    sig_rep = np.broadcast_to(sigma, (n_ag, sigma.size))
    cost_alg = float(_call(inst.cost, x, sig_rep).sum())
    h = _call(inst.constraints, x)
    violation = positive_part(h).sum(axis=0)
    feasible = bool(np.max(np.abs(inst.project(x) - x)) <= FEASIBILITY_TOL)
    return RoundTrace(
        t=t, x=x.copy(), s=s.copy(), y=y.copy(), cost_alg=cost_alg, sigma=sigma,
        err_s=consensus_error(s), err_y=consensus_error(y), violation=violation,
        track_err_s=rel_err(s.mean(axis=0), sigma),
        track_err_y=rel_err(y.mean(axis=0), g2.mean(axis=0)),
        x_tilde=None if x_tilde is None else x_tilde.copy(),
        step_norm=step_norm, xtilde_residual=xt_res, feasible=feasible,
    )


def _check_invariants(run, tr):
    problems = []
    tol = tracking_tolerance(tr.t, run.tracking_base_tol, run.tracking_drift_tol)
    if tr.track_err_s > tol:
        problems.append(("tracking_s", f"relative error {tr.track_err_s:.3e} > {tol:.3e}"))
    if tr.track_err_y > tol:
        problems.append(("tracking_y", f"relative error {tr.track_err_y:.3e} > {tol:.3e}"))
    if tr.xtilde_residual > FEASIBILITY_TOL:
        problems.append(("xtilde_feasible", f"projection residual {tr.xtilde_residual:.3e}"))
    if not np.all(np.isfinite(tr.x)):
        problems.append(("finite_x", "non-finite estimate"))
    for name, detail in problems:
        run.violations.append((name, tr.t, detail))
        if run.strict:
            raise InvariantViolation(name, tr.t, detail)


def init(network, stream, params, x0, engine="vectorized", strict=False, record_reads=False,
         tracking_tol=None):
    """Initialize every agent: s_i = phi_i,0(x_i,0), y_i = grad2 f_i,0(x_i,0, s_i,0)."""
    inst = stream.instant_at(0)
    x0 = np.array(x0, dtype=float).reshape(inst.n_agents, inst.dim)
    if network.n_agents != inst.n_agents:
        raise ValueError(f"network has {network.n_agents} agents, problem has {inst.n_agents}")
    proj = inst.project(x0)
    res = np.linalg.norm(proj - x0, axis=1)
    bad = np.flatnonzero(res > FEASIBILITY_TOL)
    if len(bad):
        raise InfeasibleStart(bad.tolist(), res[bad].tolist())
    consts = getattr(stream, "constants", None)
    if consts is not None and params.alpha > consts.max_alpha * (1 + 1e-12):
        warnings.warn(f"alpha={params.alpha} exceeds 1/L1={consts.max_alpha:.6g}; "
                      "the regret bounds do not apply", stacklevel=2)
    s0 = _call(inst.phi, x0)
    y0 = _call(inst.grad2, x0, s0)
    states = [AgentState(x0[i].copy(), s0[i].copy(), y0[i].copy(), 0) for i in range(inst.n_agents)]
    run = SimulationRun(network, stream, params, states, engine=engine, strict=strict)
    if tracking_tol is not None:
        run.tracking_base_tol, run.tracking_drift_tol = tracking_tol
    if engine == "agents":
        run.buffer = MessageBuffer(network, record=record_reads)
    elif engine != "vectorized":
        raise ValueError(f"unknown engine {engine!r}")
    run._phi, run._g2 = s0.copy(), y0.copy()
    tr = _round_trace(run, inst, 0, x0, s0, y0, s0, y0)
    _check_invariants(run, tr)
    run.traces.append(tr)
    return run


def _step_vectorized(run, inst, nxt):
    a, dl = run.params.alpha, run.params.delta
    x, s, y = run.stacked()
    direction = _call(inst.grad1, x, s) + np.einsum("knd,kd->kn", _call(inst.jac_phi, x), y)
    x_tilde = _call(inst.project, x - a * direction)
    x_new = x + dl * (x_tilde - x)
    W = run.network.weights
    phi_new = _call(nxt.phi, x_new)
    s_new = W @ s + phi_new - run._phi
    g2_new = _call(nxt.grad2, x_new, s_new)
    y_new = W @ y + g2_new - run._g2
    return x, x_tilde, x_new, s_new, y_new, phi_new, g2_new


def _step_agents(run, inst, nxt):
    """Per-agent execution: agent i touches only its own x_i and its neighbours' s_j, y_j."""
    a, dl = run.params.alpha, run.params.delta
    t = run.t
    buf = run.buffer
    n_ag = len(run.states)
    for i, st in enumerate(run.states):
        buf.publish(t, i, s=st.s, y=st.y)
    outs = []
    for i, st in enumerate(run.states):
        idx = [i]
        xi, si, yi = st.x[None], st.s[None], st.y[None]
        direction = _call(inst.grad1, xi, si, agents=idx) + np.einsum(
            "knd,kd->kn", _call(inst.jac_phi, xi, agents=idx), yi)
        xt = _call(inst.project, xi - a * direction, agents=idx)
        xn = xi + dl * (xt - xi)
        mix_s = buf.gather(t, i, "s")
        mix_y = buf.gather(t, i, "y")
        phi_n = _call(nxt.phi, xn, agents=idx)
        sn = mix_s[None] + phi_n - run._phi[i][None]
        g2_n = _call(nxt.grad2, xn, sn, agents=idx)
        yn = mix_y[None] + g2_n - run._g2[i][None]
        outs.append((xt[0], xn[0], sn[0], yn[0], phi_n[0], g2_n[0]))
    buf.commit()
    x = np.array([st.x for st in run.states])
    cols = list(zip(*outs))
    return (x,) + tuple(np.array(c).reshape(n_ag, -1) for c in cols)


def step(run):
    """Advance every agent from round t to t+1 and return the trace of round t+1."""
    t = run.t
    inst = _call(run.stream.instant_at, t)
    nxt = _call(run.stream.instant_at, t + 1)
    if run.engine == "agents":
        x, x_tilde, x_new, s_new, y_new, phi_new, g2_new = _step_agents(run, inst, nxt)
    else:
        x, x_tilde, x_new, s_new, y_new, phi_new, g2_new = _step_vectorized(run, inst, nxt)
    xt_res = float(np.max(np.abs(inst.project(x_tilde) - x_tilde)))
    for i, st in enumerate(run.states):
        st.x, st.s, st.y, st.t = x_new[i].copy(), s_new[i].copy(), y_new[i].copy(), t + 1
    run._phi, run._g2 = phi_new, g2_new
    tr = _round_trace(run, nxt, t + 1, x_new, s_new, y_new, phi_new, g2_new,
                      x_tilde=x_tilde, step_norm=float(np.linalg.norm(x_new - x)), xt_res=xt_res)
    _check_invariants(run, tr)
    run.traces.append(tr)
    return tr


def run_horizon(run, T):
    """Execute T rounds; returns the traces of rounds t+1 .. t+T."""
    if T < 1:
        raise ValueError("T must be >= 1")
    return [step(run) for _ in range(T)]


def simulate(network, stream, params, x0, T=None, **kwargs):
    """init + run_horizon over the stream horizon (or T rounds)."""
    run = init(network, stream, params, x0, **kwargs)
    run_horizon(run, stream.horizon if T is None else T)
    return run


def static_decay_factor(alpha, delta, curvature):
    """Contraction per round of the unconstrained scalar recursion."""
    return 1.0 - alpha * delta * curvature


def log_error_slope(errors):
    return math.log(errors[-1] / errors[0]) / (len(errors) - 1)
