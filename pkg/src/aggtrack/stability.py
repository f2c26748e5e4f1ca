"""The 3x3 comparison system behind the regret bound, and step-size certification."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import InvalidConstants, NoStableDelta, NotSchur
from .problem import ProblemConstants, VariationBounds

SCHUR_MARGIN = 1e-12
GRID_STEP = 1e-4
BISECT_TOL = 1e-8


@dataclass(frozen=True)
class StabilityModel:
    """Comparison system z_{t+1} <= (M0 + delta E) z_t + B u.

    z stacks (||x - x*||, ||s - 1 s_bar||, ||y - 1 y_bar||). With a single
    agent the two consensus errors are identically zero, so only the first
    row of the system is active (``reduced``).
    """

    M0: np.ndarray
    E: np.ndarray
    B: np.ndarray
    u: np.ndarray
    constants: ProblemConstants
    bounds: VariationBounds
    rho: float
    alpha: float
    n_agents: int
    reduced: bool = False

    def M(self, delta):
        return self.M0 + delta * self.E

    @property
    def Q(self):
        return float(np.linalg.norm(self.B @ self.u))

    @property
    def Q_closed_form(self):
        b, n, L2 = self.bounds, self.n_agents, self.constants.L2
        return math.sqrt(b.zeta**2 + n * (b.eta + b.omega) ** 2 + n * (b.eta + L2 * b.omega) ** 2)

    def to_dict(self):
        return {
            "M0": self.M0.tolist(), "E": self.E.tolist(), "B": self.B.tolist(),
            "u": self.u.tolist(), "rho": self.rho, "alpha": self.alpha,
            "n_agents": self.n_agents, "reduced": self.reduced, "Q": self.Q,
            "constants": self.constants.to_dict(), "bounds": self.bounds.to_dict(),
        }


def build_model(constants, bounds, rho, alpha, n_agents, check_alpha=True):
    """Populate M0, E, B and u from the analysis constants."""
    if not isinstance(constants, ProblemConstants):
        raise InvalidConstants("constants must be a ProblemConstants")
    if not 0 <= rho < 1:
        raise InvalidConstants(f"rho must lie in [0, 1), got {rho}")
    if alpha <= 0:
        raise InvalidConstants("alpha must be positive")
    if check_alpha and alpha > constants.max_alpha * (1 + 1e-12):
        raise InvalidConstants(f"alpha={alpha} exceeds 1/L1={constants.max_alpha}")
    if bounds is None:
        bounds = VariationBounds()
    for name in ("eta", "omega", "zeta"):
        if not math.isfinite(getattr(bounds, name)):
            raise InvalidConstants(f"variation bound {name} is not finite")
    mu, L1, L2, L3 = constants.mu, constants.L1, constants.L2, constants.L3
    a = alpha
    M0 = np.array([[1.0, 0.0, 0.0], [0.0, rho, 0.0], [0.0, 2 * L2, rho]])
    e21 = 2 * L3 + a * L1 * L3 + a * L1 * L3**2
    coup = L2 + L2 * L3
    e31 = (2 + a * L1 + a * L1) * coup
    e32 = a * L1 * coup
    e33 = a * L3 * coup
    E = np.array([
        [-mu * a, a * L1, a * L3],
        [e21, a * L1 * L3, a * L3**2],
        [e31, e32, e33],
    ])
    B = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0], [0.0, 1.0, L2]])
    sqn = math.sqrt(n_agents)
    u = np.array([bounds.zeta, sqn * bounds.eta, sqn * bounds.omega])
    return StabilityModel(M0, E, B, u, constants, bounds, float(rho), float(alpha),
                          int(n_agents), reduced=(n_agents == 1))


def char_poly(M):
    """Coefficients (c2, c1, c0) of det(lambda I - M) = lambda^3 + c2 lambda^2 + c1 lambda + c0."""
    tr = M[0, 0] + M[1, 1] + M[2, 2]
    minors = (M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
              + M[0, 0] * M[2, 2] - M[0, 2] * M[2, 0]
              + M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1])
    det = (M[0, 0] * (M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1])
           - M[0, 1] * (M[1, 0] * M[2, 2] - M[1, 2] * M[2, 0])
           + M[0, 2] * (M[1, 0] * M[2, 1] - M[1, 1] * M[2, 0]))
    return -tr, minors, -det


def _cardano(c2, c1, c0):
    """Roots of lambda^3 + c2 lambda^2 + c1 lambda + c0 (possibly complex)."""
    p = c1 - c2 * c2 / 3.0
    q = 2.0 * c2**3 / 27.0 - c2 * c1 / 3.0 + c0
    shift = -c2 / 3.0
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    if p < 0 and disc < 0:
        r = 2.0 * math.sqrt(-p / 3.0)
        arg = max(-1.0, min(1.0, 3.0 * q / (p * r)))
        th = math.acos(arg) / 3.0
        return [r * math.cos(th - 2.0 * math.pi * k / 3.0) + shift for k in range(3)]
    sd = math.sqrt(disc)
    cu = float(np.cbrt(-q / 2.0 + sd))
    cv = float(np.cbrt(-q / 2.0 - sd))
    re_part = -(cu + cv) / 2.0 + shift
    im_part = math.sqrt(3.0) / 2.0 * (cu - cv)
    return [cu + cv + shift, complex(re_part, im_part), complex(re_part, -im_part)]


def eigenvalues3(M):
    """Eigenvalues of a 3x3 matrix: closed-form characteristic polynomial,
    falling back to the companion matrix when the Cardano roots are
    inaccurate (near-repeated roots). Triangular matrices, M0 among them,
    return their diagonal."""
    if not np.any(np.triu(M, 1)) or not np.any(np.tril(M, -1)):
        return np.diag(M).astype(complex)
    c2, c1, c0 = char_poly(M)
    roots = np.array(_cardano(c2, c1, c0), dtype=complex)
    scale = 1.0 + abs(c2) + abs(c1) + abs(c0)
    resid = np.abs(roots**3 + c2 * roots**2 + c1 * roots + c0)
    if not np.all(np.isfinite(roots)) or np.max(resid) > 1e-12 * scale:
        companion = np.array([[-c2, -c1, -c0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        roots = np.linalg.eigvals(companion)
    return roots


def spectral_radius(model, delta):
    """lambda(delta) = max |eig(M0 + delta E)| (first row only when reduced)."""
    M = model.M(delta)
    if model.reduced:
        return abs(float(M[0, 0]))
    return float(np.max(np.abs(eigenvalues3(M))))


def is_schur(model, delta):
    return spectral_radius(model, delta) < 1.0 - SCHUR_MARGIN


def lambda_curve(model, deltas):
    deltas = np.asarray(deltas, dtype=float)
    if model.reduced:
        return np.abs(1.0 + deltas * model.E[0, 0])
    mats = model.M0[None] + deltas[:, None, None] * model.E[None]
    return np.max(np.abs(np.linalg.eigvals(mats)), axis=1)


def lambda_derivative(model, h=1e-6):
    """One-sided second-order finite difference of lambda at delta = 0."""
    l0, l1, l2 = (spectral_radius(model, d) for d in (0.0, h, 2 * h))
    return (-3.0 * l0 + 4.0 * l1 - l2) / (2.0 * h)


def find_delta(model, target="largest_schur", grid_step=GRID_STEP, tol=BISECT_TOL):
    """Search delta in (0, 1) on a grid, then refine.

    ``largest_schur``: largest delta with lambda(delta) < 1, refined by
    bisection against the next unstable grid point. ``minimize``: delta of
    smallest lambda, refined by bounded scalar minimization in the
    neighbouring grid cells. Returns (delta, lambda, curve) with the grid
    curve as an (k, 2) array.
    """
    if model.constants.mu <= 0:
        raise InvalidConstants("strong convexity required")
    grid = np.arange(grid_step, 1.0, grid_step)
    lam = lambda_curve(model, grid)
    curve = np.column_stack([grid, lam])
    stable = lam < 1.0 - SCHUR_MARGIN
    if not np.any(stable):
        raise NoStableDelta("lambda(delta) >= 1 on the whole grid", curve=curve)
    if target in ("largest_schur", "largest Schur"):
        k = int(np.flatnonzero(stable)[-1])
        lo = grid[k]
        hi = grid[k + 1] if k + 1 < len(grid) else 1.0
        if k + 1 >= len(grid) and is_schur(model, 1.0 - tol):
            lo = 1.0 - tol
        else:
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if is_schur(model, mid):
                    lo = mid
                else:
                    hi = mid
        return float(lo), spectral_radius(model, lo), curve
    if target in ("minimize", "minimize λ", "minimize_lambda"):
        k = int(np.argmin(lam))
        a = grid[k - 1] if k > 0 else grid_step * 1e-3
        b = grid[k + 1] if k + 1 < len(grid) else 1.0 - tol
        res = minimize_scalar(lambda d: spectral_radius(model, d), bounds=(a, b),
                              method="bounded", options={"xatol": tol})
        d = float(res.x) if res.fun <= lam[k] else float(grid[k])
        return d, spectral_radius(model, d), curve
    raise ValueError(f"unknown target {target!r}")


def theoretical_bounds(model, delta, T, z0):
    """Cost-gap and regret bounds implied by lambda(delta) < 1.

    Returns per-round gap bounds for t = 0..T, the cumulative regret bound
    for every horizon 1..T, and the asymptotic average-regret bound.
    """
    lam = spectral_radius(model, delta)
    if not lam < 1.0 - SCHUR_MARGIN:
        raise NotSchur(f"lambda({delta}) = {lam} >= 1")
    L1 = model.constants.L1
    U0 = float(np.linalg.norm(z0))
    Q = model.Q
    t = np.arange(T + 1, dtype=float)
    per_round = 0.5 * L1 * (lam ** (2 * t) * U0**2 + 2 * lam**t * U0 * Q / (1 - lam)
                            + Q**2 / (1 - lam) ** 2)
    horizons = np.arange(1, T + 1, dtype=float)
    cumulative = 0.5 * L1 * (U0**2 / (1 - lam**2) + 2 * U0 * Q / (1 - lam) ** 2
                             + horizons * Q**2 / (1 - lam) ** 2)
    avg_limit = 0.5 * L1 * Q**2 / (1 - lam) ** 2
    return {
        "lambda": lam, "U0": U0, "Q": Q, "per_round": per_round,
        "cumulative_regret": cumulative, "average_regret_limit": avg_limit,
    }


def certify(constants, bounds, rho, alpha, n_agents, delta=None, target="minimize"):
    """Full certification report used by the CLI (JSON serializable)."""
    model = build_model(constants, bounds, rho, alpha, n_agents)
    report = {
        "rho": rho, "alpha": alpha, "n_agents": n_agents,
        "constants": constants.to_dict(), "bounds": bounds.to_dict(),
        "Q": model.Q, "Q_closed_form": model.Q_closed_form,
        "reduced": model.reduced, "dlambda_ddelta_at_0": lambda_derivative(model),
    }
    try:
        d_best, l_best, curve = find_delta(model, "minimize")
        d_max, l_max, _ = find_delta(model, "largest_schur")
        report.update(schur_exists=True, delta_minimize=d_best, lambda_minimize=l_best,
                      delta_largest_schur=d_max, lambda_largest_schur=l_max)
    except NoStableDelta as exc:
        curve = exc.curve
        report.update(schur_exists=False)
    sample = curve[np.unique(np.linspace(0, len(curve) - 1, min(200, len(curve))).astype(int))]
    report["curve"] = sample.tolist()
    if delta is not None:
        lam = spectral_radius(model, delta)
        report.update(delta=delta, lambda_delta=lam, certified=bool(lam < 1.0 - SCHUR_MARGIN))
    return report, model
