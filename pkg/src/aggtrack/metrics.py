"""Regret, constraint violation, consensus errors and the per-step lemma monitors."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantViolation, MissingConstants, MissingOracle

CSV_COLUMNS = [
    "t", "cost_alg", "cost_opt", "regret_inc", "cum_regret", "avg_regret",
    "err_x", "err_s", "err_y", "violation_sum",
    "lemma1_slack", "lemma2_slack", "lemma3_slack", "lemma4_slack",
]

REGRET_TOL = 1e-6
SLACK_TOL = 1e-9
ORACLE_OPT_TOL = 1e-6


@dataclass
class RoundTrace:
    """Everything recorded about round t (the state after t algorithm steps)."""

    t: int
    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    cost_alg: float
    sigma: np.ndarray
    err_s: float
    err_y: float
    violation: np.ndarray
    track_err_s: float
    track_err_y: float
    x_tilde: np.ndarray | None = None
    step_norm: float | None = None
    xtilde_residual: float = 0.0
    feasible: bool = True
    cost_opt: float | None = None
    regret_increment: float | None = None
    cum_regret: float | None = None
    err_x: float | None = None
    lemma_slack: dict = field(default_factory=dict)

    @property
    def z(self):
        if self.err_x is None:
            raise MissingOracle(f"round {self.t} has no oracle solution")
        return np.array([self.err_x, self.err_s, self.err_y])


def consensus_error(v):
    """|| v - 1 mean(v) || for stacked agent rows."""
    return float(np.linalg.norm(v - v.mean(axis=0)))


def positive_part(h):
    return np.maximum(h, 0.0)


def attach_oracle(traces, solutions, optimality_tol=ORACLE_OPT_TOL):
    """Fill cost_opt, regret and err_x from oracle solutions indexed by round.

    A feasible iterate beating the oracle by more than ``optimality_tol``
    means the oracle did not solve its round; that raises InvariantViolation.
    Infeasible iterates (a drifting set can leave x_t outside X_t) may
    legitimately have negative regret.
    """
    by_t = {sol.t: sol for sol in solutions}
    cum = 0.0
    for tr in traces:
        sol = by_t.get(tr.t)
        if sol is None:
            raise MissingOracle(f"no oracle solution for round {tr.t}")
        tr.cost_opt = sol.cost
        tr.err_x = float(np.linalg.norm(tr.x - sol.x_star))
        tr.regret_increment = tr.cost_alg - tr.cost_opt
        if tr.feasible and tr.regret_increment < -optimality_tol * max(1.0, abs(sol.cost)):
            raise InvariantViolation("oracle_optimality", tr.t,
                                     f"feasible iterate beats the oracle by {-tr.regret_increment:.3e}")
        if tr.t >= 1:
            cum += tr.regret_increment
        tr.cum_regret = cum
    return traces


def _regret_rounds(traces):
    rounds = [tr for tr in traces if tr.t >= 1]
    if not rounds:
        raise MissingOracle("no rounds with t >= 1")
    if any(tr.regret_increment is None for tr in rounds):
        raise MissingOracle("traces lack oracle costs; run attach_oracle first")
    return rounds


def dynamic_regret(traces):
    """R_T = sum over t = 1..T of f_t(x_t) - f_t(x*_t)."""
    return float(sum(tr.regret_increment for tr in _regret_rounds(traces)))


def average_regret(traces):
    """Series R_T / T for T = 1, 2, ..."""
    inc = np.array([tr.regret_increment for tr in _regret_rounds(traces)])
    return np.cumsum(inc) / np.arange(1, len(inc) + 1)


def violation_bound(gamma, n_agents, delta, t):
    """Per-round violation bound gamma N (1 - (1-delta)^t) / delta."""
    t = np.asarray(t, dtype=float)
    return gamma * n_agents * (1.0 - (1.0 - delta) ** t) / delta


def cumulative_violation_bound(gamma, n_agents, delta, T):
    """Closed form of the summed per-round bound over t = 1..T."""
    T = np.asarray(T, dtype=float)
    return gamma * n_agents * (T * delta + delta - 1.0 + (1.0 - delta) ** (T + 1)) / delta**2


def violation_profile(traces, gamma=None, delta=None, n_agents=None):
    """Per-round sum_i [h_{i,t}(x_{i,t})]^+ (componentwise) and its cumulative sum.

    When ``gamma``, ``delta`` and ``n_agents`` are given, the theoretical
    per-round and cumulative bounds are evaluated for the same rounds, and
    ``holds`` reports whether the measured profile stays below both.
    """
    ts = np.array([tr.t for tr in traces])
    per_round = np.array([tr.violation for tr in traces])
    mask = ts >= 1
    cumulative = np.cumsum(np.where(mask[:, None], per_round, 0.0), axis=0)
    out = {"t": ts, "per_round": per_round, "cumulative": cumulative}
    if gamma is not None and delta is not None and n_agents is not None:
        b13 = violation_bound(gamma, n_agents, delta, ts)
        b14 = cumulative_violation_bound(gamma, n_agents, delta, ts)
        b14 = np.where(ts >= 1, b14, 0.0)
        scale = 1e-9 * (1.0 + np.abs(b13))
        ok13 = np.all(per_round <= (b13 + scale)[:, None])
        ok14 = np.all(cumulative <= (b14 + 1e-9 * (1.0 + np.abs(b14)))[:, None])
        out.update(bound_per_round=b13, bound_cumulative=b14,
                   holds_per_round=bool(ok13), holds_cumulative=bool(ok14),
                   holds=bool(ok13 and ok14))
    return out


def lemma_rhs(z, step_constants, lemma4="printed"):
    """Right-hand sides of the four per-step inequalities for one round.

    ``z`` = (err_x, err_s, err_y) at round t; ``step_constants`` carries
    alpha, delta, mu, L1, L2, L3, rho, N and the round's zeta, eta, omega.
    Returns (rhs1, rhs2, rhs3, rhs4) bounding err_x(t+1), ||x(t+1) - x(t)||,
    err_s(t+1) and err_y(t+1).
    """
    ex, es, ey = z
    c = step_constants
    a, dl, mu = c["alpha"], c["delta"], c["mu"]
    L1, L2, L3, rho, sqn = c["L1"], c["L2"], c["L3"], c["rho"], math.sqrt(c["N"])
    rhs1 = (1 - dl * mu * a) * ex + dl * a * L1 * es + dl * a * L3 * ey + c["zeta"]
    rhs2 = dl * (2 + a * L1 + a * L1 * L3) * ex + dl * a * L1 * es + dl * a * L3 * ey
    rhs3 = ((rho + dl * a * L1 * L3) * es + dl * (2 * L3 + a * L1 * L3 + a * L1 * L3**2) * ex
            + dl * a * L3**2 * ey + sqn * c["omega"])
    lead = 2 + a * L1 + a * L1 if lemma4 == "printed" else 2 + a * L1 + a * L1 * L3
    coup = L2 + L2 * L3
    rhs4 = ((rho + dl * a * L3 * coup) * ey + dl * lead * coup * ex
            + dl * a * L1 * coup * es + 2 * L2 * es + L2 * sqn * c["omega"] + sqn * c["eta"])
    return rhs1, rhs2, rhs3, rhs4


@dataclass
class MonitorReport:
    """Per-transition slack of the lemma inequalities and of z_{t+1} <= M z_t + B u_t.

    Row k describes the transition from round ``t[k]`` to ``t[k] + 1``.
    """

    t: np.ndarray
    lemma_slack: np.ndarray
    z_slack: np.ndarray
    exact: bool
    tol: float = SLACK_TOL

    @property
    def min_slack(self):
        return np.min(self.lemma_slack, axis=0)

    @property
    def violations(self):
        """(round, lemma) pairs with slack below -tol (lemma numbered 1..4)."""
        bad = np.argwhere(self.lemma_slack < -self.tol)
        return [(int(self.t[r]), int(c) + 1) for r, c in bad]

    @property
    def z_violations(self):
        bad = np.argwhere(self.z_slack < -self.tol)
        return [(int(self.t[r]), int(c)) for r, c in bad]

    @property
    def ok(self):
        return not self.violations and not self.z_violations


def lemma_monitors(traces, constants, bounds, alpha, delta, rho, n_agents,
                   exact=True, lemma4="printed", tol=SLACK_TOL):
    """Evaluate the four per-step inequalities and the comparison system on a run.

    ``bounds`` supplies zeta/eta/omega, per round when measured. Slack is
    RHS - LHS; ``exact`` marks runs whose constants are exact, for which a
    negative slack is an error rather than a sign of underestimated
    constants. Slack values are also written into each trace's
    ``lemma_slack`` (keyed 1..4, stored on the later round).
    """
    from .stability import build_model

    if constants is None or bounds is None:
        raise MissingConstants("lemma monitors need ProblemConstants and VariationBounds")
    model = build_model(constants, bounds, rho, alpha, n_agents, check_alpha=False)
    M = model.M(delta)
    rows_t, slack, zslack = [], [], []
    for cur, nxt in zip(traces[:-1], traces[1:]):
        if nxt.t != cur.t + 1:
            continue
        z = cur.z
        zn = nxt.z
        sc = {
            "alpha": alpha, "delta": delta, "mu": constants.mu, "L1": constants.L1,
            "L2": constants.L2, "L3": constants.L3, "rho": rho, "N": n_agents,
            "zeta": bounds.at("zeta", cur.t), "eta": bounds.at("eta", cur.t),
            "omega": bounds.at("omega", cur.t),
        }
        rhs = lemma_rhs(z, sc, lemma4=lemma4)
        step = float(np.linalg.norm(nxt.x - cur.x))
        lhs = (zn[0], step, zn[1], zn[2])
        sl = [r - l for r, l in zip(rhs, lhs)]
        nxt.lemma_slack = {k + 1: v for k, v in enumerate(sl)}
        u = np.array([sc["zeta"], math.sqrt(n_agents) * sc["eta"], math.sqrt(n_agents) * sc["omega"]])
        zslack.append(M @ z + model.B @ u - zn)
        slack.append(sl)
        rows_t.append(cur.t)
    return MonitorReport(np.array(rows_t), np.array(slack).reshape(-1, 4),
                         np.array(zslack).reshape(-1, 3), exact, tol)


def cost_gap_check(traces, L1):
    """Slack of f_t(x_t) - f_t(x*_t) <= (L1/2) ||x_t - x*_t||^2 per round.

    The inequality follows from L1-smoothness only when the gradient
    vanishes at x*_t (interior optimum); callers decide applicability.
    """
    return np.array([0.5 * L1 * tr.err_x**2 - tr.regret_increment for tr in traces])


def trace_rows(traces):
    rows = []
    avg = None
    for tr in traces:
        cum = tr.cum_regret
        if cum is not None and tr.t >= 1:
            avg = cum / tr.t
        else:
            avg = None
        rows.append({
            "t": tr.t,
            "cost_alg": tr.cost_alg,
            "cost_opt": tr.cost_opt,
            "regret_inc": tr.regret_increment,
            "cum_regret": cum,
            "avg_regret": avg,
            "err_x": tr.err_x,
            "err_s": tr.err_s,
            "err_y": tr.err_y,
            "violation_sum": float(np.sum(tr.violation)),
            "lemma1_slack": tr.lemma_slack.get(1),
            "lemma2_slack": tr.lemma_slack.get(2),
            "lemma3_slack": tr.lemma_slack.get(3),
            "lemma4_slack": tr.lemma_slack.get(4),
        })
    return rows


def fmt(v):
    """17-significant-digit float text; empty for missing values."""
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


def write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r.get(c)) for c in columns])


def write_trace_csv(path, traces):
    write_csv(path, trace_rows(traces), CSV_COLUMNS)


def summarize_trials(series_list):
    """Per-t mean and (population) standard deviation across equal-length series."""
    arr = np.vstack([np.asarray(s, dtype=float) for s in series_list])
    return arr.mean(axis=0), arr.std(axis=0)


def loglinear_fit(values, transient=0.1):
    """Least-squares fit of log(values) against t after dropping a transient.

    Returns (slope, r_squared) over the retained tail.
    """
    v = np.asarray(values, dtype=float)
    start = int(math.ceil(transient * len(v)))
    tail = v[start:]
    t = np.arange(start, len(v), dtype=float)
    keep = tail > 0
    y = np.log(tail[keep])
    t = t[keep]
    if len(y) < 3:
        return float("nan"), float("nan")
    A = np.vstack([t, np.ones_like(t)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), r2


def plateau_variation(series, tail=0.2):
    """(max - min) / |mean| of a series over its final ``tail`` fraction."""
    s = np.asarray(series, dtype=float)
    w = s[int(math.floor((1 - tail) * len(s))):]
    return float((w.max() - w.min()) / abs(w.mean()))
