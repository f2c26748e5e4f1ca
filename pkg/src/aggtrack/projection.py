"""Euclidean projections onto boxes, halfspaces and their intersections."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonConvergent

DEFAULT_TOL = 1e-9
DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_SWEEPS = 10_000


class ConvexSet:
    """Closed convex subset of R^n with a cheap Euclidean projection."""

    dim: int | None = None

    def _check(self, point):
        p = np.asarray(point, dtype=float)
        if p.ndim != 1:
            raise DimensionMismatch(f"expected a vector, got shape {p.shape}")
        if self.dim is not None and p.shape[0] != self.dim:
            raise DimensionMismatch(f"point has dimension {p.shape[0]}, set has {self.dim}")
        return p


@dataclass(frozen=True, eq=False)
class WholeSpace(ConvexSet):
    dim: int | None = None


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        up = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != up.shape:
            raise DimensionMismatch("box bounds have different dimensions")
        if np.any(lo > up):
            raise ValueError(f"box lower bound exceeds upper bound: {lo} > {up}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @property
    def dim(self):
        return self.lower.shape[0]


@dataclass(frozen=True, eq=False)
class Halfspace(ConvexSet):
    """The set ``{x : normal . x <= offset}``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        a = np.asarray(self.normal, dtype=float).reshape(-1)
        if not np.any(a):
            raise ValueError("halfspace normal must be nonzero")
        object.__setattr__(self, "normal", a)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self):
        return self.normal.shape[0]


@dataclass(frozen=True, eq=False)
class Intersection(ConvexSet):
    members: tuple

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("intersection needs at least one member")
        dims = {m.dim for m in members if m.dim is not None}
        if len(dims) > 1:
            raise DimensionMismatch(f"intersection members have dimensions {sorted(dims)}")
        object.__setattr__(self, "members", members)

    @property
    def dim(self):
        for m in self.members:
            if m.dim is not None:
                return m.dim
        return None


def _halfspace_rows(members):
    """Stack a polyhedral intersection as A x <= c, or None if a member is not polyhedral."""
    rows, rhs = [], []
    for m in members:
        if isinstance(m, Box):
            eye = np.eye(len(m.lower))
            for i in range(len(m.lower)):
                if np.isfinite(m.upper[i]):
                    rows.append(eye[i])
                    rhs.append(m.upper[i])
                if np.isfinite(m.lower[i]):
                    rows.append(-eye[i])
                    rhs.append(-m.lower[i])
        elif isinstance(m, Halfspace):
            rows.append(np.asarray(m.normal, float))
            rhs.append(m.offset)
        else:
            return None
    return np.array(rows), np.array(rhs)


def _polish(A, c, point, x, eps, max_active=10):
    """Solve the projection exactly on constraints active (within eps) at x.

    Subsets of the near-active rows are tried, smallest first, since
    degenerate corners have more near-active rows than independent ones.
    Returns the first KKT point (feasible, nonnegative multipliers) or None.
    """
    near = np.flatnonzero(A @ x - c >= -eps)
    if not len(near) or len(near) > max_active:
        return None
    scale = 1e-12 * (1.0 + np.max(np.abs(c)))
    for k in range(1, min(len(near), A.shape[1]) + 1):
        for rows in itertools.combinations(near, k):
            C, d = A[list(rows)], c[list(rows)]
            lam, *_ = np.linalg.lstsq(C @ C.T, C @ point - d, rcond=None)
            if np.any(lam < -1e-12):
                continue
            z = point - C.T @ lam
            if np.max(A @ z - c) <= scale:
                return z
    return None


def _dykstra(members, point, tol, max_sweeps, polish_every=50):
    """Dykstra's alternating projections.

    For polyhedral members the active set at the current iterate is tried
    every ``polish_every`` sweeps; a point passing the KKT test is the exact
    projection, which rescues slow runs where faces meet at small angles.
    """
    poly = _halfspace_rows(members)
    x = point.copy()
    incr = [np.zeros_like(point) for _ in members]
    for sweep in range(1, max_sweeps + 1):
        x_start = x
        change = 0.0
        for k, m in enumerate(members):
            y = x + incr[k]
            x_new = project(m, y)
            new_incr = y - x_new
            change += float(np.sum((incr[k] - new_incr) ** 2))
            incr[k] = new_incr
            x = x_new
        if np.linalg.norm(x - x_start) <= tol and change <= tol**2:
            return x
        if poly is not None and sweep % polish_every == 0:
            for eps in (1e-8, 1e-6, 1e-4):
                z = _polish(*poly, point, x, eps)
                if z is not None:
                    return z
    raise NonConvergent(
        f"Dykstra did not converge in {max_sweeps} sweeps (intersection may be empty)",
        point=x,
        residual=float(np.linalg.norm(x - x_start)),
    )


def project(cset, point, tol=DYKSTRA_TOL, max_sweeps=DYKSTRA_MAX_SWEEPS):
    """Euclidean projection of ``point`` onto ``cset``."""
    p = cset._check(point)
    if isinstance(cset, WholeSpace):
        return p.copy()
    if isinstance(cset, Box):
        return np.clip(p, cset.lower, cset.upper)
    if isinstance(cset, Halfspace):
        viol = float(cset.normal @ p) - cset.offset
        if viol <= 0.0:
            return p.copy()
        return p - (viol / float(cset.normal @ cset.normal)) * cset.normal
    if isinstance(cset, Intersection):
        members = [m for m in cset.members if not isinstance(m, WholeSpace)]
        if not members:
            return p.copy()
        if len(members) == 1:
            return project(members[0], p)
        if all(isinstance(m, Box) for m in members):
            lo = np.max([m.lower for m in members], axis=0)
            up = np.min([m.upper for m in members], axis=0)
            if np.any(lo > up):
                raise NonConvergent("intersection of boxes is empty", point=p)
            return np.clip(p, lo, up)
        return _dykstra(members, p, tol, max_sweeps)
    raise TypeError(f"unsupported set type {type(cset).__name__}")


def distance(cset, point):
    p = cset._check(point)
    return float(np.linalg.norm(project(cset, p) - p))


def contains(cset, point, tol=DEFAULT_TOL):
    """Membership test up to ``tol`` (constraint-wise for every member)."""
    p = cset._check(point)
    if isinstance(cset, WholeSpace):
        return True
    if isinstance(cset, Box):
        return bool(np.all(p >= cset.lower - tol) and np.all(p <= cset.upper + tol))
    if isinstance(cset, Halfspace):
        return bool(cset.normal @ p - cset.offset <= tol * np.linalg.norm(cset.normal))
    if isinstance(cset, Intersection):
        return all(contains(m, p, tol) for m in cset.members)
    raise TypeError(f"unsupported set type {type(cset).__name__}")


def axis_aligned_box(cset):
    """Collapse a set made only of boxes and axis-aligned halfspaces into a Box.

    Returns None when the set has a non-axis-aligned member.
    """
    if isinstance(cset, Box):
        return cset
    members = cset.members if isinstance(cset, Intersection) else (cset,)
    dim = cset.dim
    if dim is None:
        return None
    lo = np.full(dim, -np.inf)
    up = np.full(dim, np.inf)
    for m in members:
        if isinstance(m, WholeSpace):
            continue
        if isinstance(m, Box):
            lo = np.maximum(lo, m.lower)
            up = np.minimum(up, m.upper)
        elif isinstance(m, Halfspace):
            nz = np.flatnonzero(m.normal)
            if len(nz) != 1:
                return None
            k = nz[0]
            bound = m.offset / m.normal[k]
            if m.normal[k] > 0:
                up[k] = min(up[k], bound)
            else:
                lo[k] = max(lo[k], bound)
        else:
            return None
    if np.any(lo > up):
        return None
    return Box(lo, up)
